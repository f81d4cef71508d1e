#include "cpvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cpvit/error.hpp"

namespace cpvit {

namespace {

thread_local std::uint64_t g_mac_count = 0;

bool selected(std::span<const std::uint8_t> mask, std::size_t i) {
    return mask.empty() || mask[i] != 0;
}

std::size_t count_selected(std::span<const std::uint8_t> mask, std::size_t n) {
    if (mask.empty()) return n;
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; }));
}

void check_mask(std::span<const std::uint8_t> mask, std::size_t n, const char* what) {
    if (!mask.empty() && mask.size() != n) {
        std::ostringstream os;
        os << what << " selection has length " << mask.size() << ", expected " << n;
        throw DimensionError(os.str());
    }
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
    }
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_product(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        std::ostringstream os;
        os << "shape " << shape_string(shape_) << " holds " << shape_product(shape_) << " elements, got "
           << data_.size();
        throw DimensionError(os.str());
    }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& r : rows) {
        if (r.size() != n) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
    }
    return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
    if (shape_.empty()) return 1;
    std::size_t n = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) n *= shape_[i];
    return n;
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

std::span<const double> Tensor::row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
}

std::span<double> Tensor::row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

double& Tensor::at(std::size_t h, std::size_t i, std::size_t j) {
    return data_[(h * shape_[1] + i) * shape_[2] + j];
}

double Tensor::at(std::size_t h, std::size_t i, std::size_t j) const {
    return data_[(h * shape_[1] + i) * shape_[2] + j];
}

Tensor Tensor::slice(std::size_t i) const {
    if (shape_.empty() || i >= shape_[0]) {
        throw DimensionError("slice " + std::to_string(i) + " out of range for shape " + shape_string(shape_));
    }
    Shape sub(shape_.begin() + 1, shape_.end());
    const std::size_t n = shape_product(sub);
    return Tensor(std::move(sub), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                                                      data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

std::uint64_t mac_count() noexcept { return g_mac_count; }
void add_mac_count(std::uint64_t n) noexcept { g_mac_count += n; }

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul(a, b, MatmulSelection{}); }

Tensor matmul(const Tensor& a, const Tensor& b, const MatmulSelection& selection) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    check_mask(selection.rows, m, "row");
    check_mask(selection.inner, k, "inner");
    check_mask(selection.cols, n, "column");

    Tensor out({m, n});
    const auto ad = a.data();
    const auto bd = b.data();
    auto od = out.data();
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < selection.cols.size(); ++j) {
        if (selection.cols[j]) cols.push_back(j);
    }
    const bool all_cols = selection.cols.empty() || cols.size() == n;
    for (std::size_t i = 0; i < m; ++i) {
        if (!selected(selection.rows, i)) continue;
        double* orow = od.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            if (!selected(selection.inner, p)) continue;
            const double aip = ad[i * k + p];
            const double* brow = bd.data() + p * n;
            if (all_cols) {
                for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
            } else {
                for (std::size_t j : cols) orow[j] += aip * brow[j];
            }
        }
    }
    add_mac_count(static_cast<std::uint64_t>(count_selected(selection.rows, m)) * count_selected(selection.inner, k) *
                  count_selected(selection.cols, n));
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    if (a.rank() == 0 || a.cols() == 0) {
        throw DimensionError("softmax_rows: empty last dimension in shape " + shape_string(a.shape()));
    }
    Tensor out = a;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (auto& v : row) {
            v = std::exp(v - peak);
            total += v;
        }
        for (auto& v : row) v /= total;
    }
    return out;
}

Tensor masked_softmax_rows(const Tensor& a, std::span<const std::uint8_t> column_mask) {
    if (a.rank() == 0 || a.cols() == 0) {
        throw DimensionError("masked_softmax_rows: empty last dimension in shape " + shape_string(a.shape()));
    }
    if (column_mask.size() != a.cols()) {
        throw DimensionError("masked_softmax_rows: mask length " + std::to_string(column_mask.size()) +
                             " does not match shape " + shape_string(a.shape()));
    }
    if (std::none_of(column_mask.begin(), column_mask.end(), [](std::uint8_t v) { return v != 0; })) {
        throw ParameterError("masked_softmax_rows: no surviving patches");
    }
    Tensor out = a;
    const std::size_t n = a.cols();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        double peak = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            if (column_mask[j]) peak = std::max(peak, row[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (column_mask[j]) {
                row[j] = std::exp(row[j] - peak);
                total += row[j];
            } else {
                row[j] = 0.0;
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (column_mask[j]) row[j] /= total;
        }
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_matrix(x, "layer_norm");
    const std::size_t e = x.dim(1);
    if (gamma.size() != e || beta.size() != e) {
        throw DimensionError("layer_norm: input " + shape_string(x.shape()) + ", gamma " + shape_string(gamma.shape()) +
                             ", beta " + shape_string(beta.shape()));
    }
    Tensor out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(e);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(e);
        const double denom = std::sqrt(var + eps);
        for (std::size_t j = 0; j < e; ++j) {
            // zero-variance rows normalize to 0 so the output collapses to beta
            const double normed = denom > 0.0 ? (row[j] - mean) / denom : 0.0;
            row[j] = normed * gamma[j] + beta[j];
        }
    }
    return out;
}

double gelu(double x) noexcept {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data()) v = gelu(v);
    return out;
}

void add_row_bias(Tensor& x, const Tensor& bias, std::span<const std::uint8_t> rows) {
    if (bias.size() != x.cols()) {
        throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) + " vs input " +
                             shape_string(x.shape()));
    }
    check_mask(rows, x.rows(), "row");
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (!selected(rows, r)) continue;
        auto row = x.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
    }
}

void zero_masked_rows(Tensor& x, std::span<const std::uint8_t> rows) {
    check_mask(rows, x.rows(), "row");
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (!rows[r]) std::fill(x.row(r).begin(), x.row(r).end(), 0.0);
    }
}

double sum(const Tensor& x) noexcept {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return total;
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw DimensionError("argmax of an empty range");
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace cpvit
