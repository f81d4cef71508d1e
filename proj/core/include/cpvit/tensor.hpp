#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cpvit {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_product(const Shape& shape);

/// Dense row-major array of doubles. The last dimension is the "row" axis for
/// the row-wise kernels; all leading dimensions are flattened into rows.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor vector(std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Product of all but the last dimension.
    std::size_t rows() const noexcept;
    /// Last dimension, 0 for rank-0 tensors.
    std::size_t cols() const noexcept;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    std::span<const double> row(std::size_t r) const;
    std::span<double> row(std::size_t r);

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t h, std::size_t i, std::size_t j);
    double at(std::size_t h, std::size_t i, std::size_t j) const;

    /// Copy of index `i` along the first axis.
    Tensor slice(std::size_t i) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Largest absolute elementwise difference; throws on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

// Multiply-accumulate instrumentation. Every kernel that performs a
// multiply-add adds to a thread-local counter; the FLOPs model is checked
// against it.
std::uint64_t mac_count() noexcept;
void add_mac_count(std::uint64_t n) noexcept;

class MacCountScope {
public:
    MacCountScope() noexcept : start_(mac_count()) {}
    std::uint64_t count() const noexcept { return mac_count() - start_; }

private:
    std::uint64_t start_;
};

Tensor matmul(const Tensor& a, const Tensor& b);

/// Selection applied to a matmul: only `rows` of the output are computed,
/// only `inner` indices participate in each dot product, only `cols` of the
/// output are computed. Empty spans select everything. Skipped outputs are 0.
struct MatmulSelection {
    std::span<const std::uint8_t> rows;
    std::span<const std::uint8_t> inner;
    std::span<const std::uint8_t> cols;
};

Tensor matmul(const Tensor& a, const Tensor& b, const MatmulSelection& selection);

Tensor softmax_rows(const Tensor& a);

/// Softmax over the unmasked columns of every row; masked columns are exactly 0.
Tensor masked_softmax_rows(const Tensor& a, std::span<const std::uint8_t> column_mask);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// tanh approximation of GELU.
double gelu(double x) noexcept;
Tensor gelu(const Tensor& x);

/// Adds `bias` (length cols) to every selected row; empty selection means all rows.
void add_row_bias(Tensor& x, const Tensor& bias, std::span<const std::uint8_t> rows = {});

/// Zeroes rows whose mask entry is 0.
void zero_masked_rows(Tensor& x, std::span<const std::uint8_t> rows);

double sum(const Tensor& x) noexcept;
std::size_t argmax(std::span<const double> values);

}  // namespace cpvit
