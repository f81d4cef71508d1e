#include "cpvit/archive.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "cpvit/error.hpp"

namespace cpvit {

const char* to_string(ArchiveErrorKind kind) noexcept {
    switch (kind) {
        case ArchiveErrorKind::io: return "io error";
        case ArchiveErrorKind::bad_magic: return "bad magic";
        case ArchiveErrorKind::unsupported_version: return "unsupported version";
        case ArchiveErrorKind::truncated: return "truncated archive";
        case ArchiveErrorKind::duplicate_name: return "duplicate name";
        case ArchiveErrorKind::malformed: return "malformed archive";
    }
    return "archive error";
}

namespace {

constexpr std::uint8_t dtype_f64 = 1;
constexpr std::size_t max_rank = 8;

template <typename T>
void put(std::vector<std::byte>& out, T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xffu));
    }
}

void put_double(std::vector<std::byte>& out, double value) { put(out, std::bit_cast<std::uint64_t>(value)); }

class Reader {
public:
    explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        require(sizeof(T), what);
        std::uint64_t value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(value);
    }

    std::span<const std::byte> take(std::size_t n, const char* what) {
        require(n, what);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void require(std::size_t n, const char* what) const {
        if (n > remaining()) {
            throw ArchiveError(ArchiveErrorKind::truncated, std::string("unexpected end of data reading ") + what);
        }
    }

    std::span<const std::byte> bytes_;
    std::size_t pos_ = 0;
};

bool valid_utf8(std::span<const std::byte> text) {
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = std::to_integer<std::uint8_t>(text[i]);
        std::size_t extra = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            extra = 1;
            cp = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            extra = 2;
            cp = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + extra >= text.size()) return false;
        for (std::size_t k = 1; k <= extra; ++k) {
            const auto cc = std::to_integer<std::uint8_t>(text[i + k]);
            if ((cc & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        constexpr std::uint32_t min_for_length[] = {0, 0x80, 0x800, 0x10000};
        if (cp < min_for_length[extra] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
        i += extra + 1;
    }
    return true;
}

struct EntryHeader {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t bytes = 0;
};

std::vector<std::byte> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError(ArchiveErrorKind::io, "cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw ArchiveError(ArchiveErrorKind::io, "read failed for " + path.string());
    std::vector<std::byte> bytes(raw.size());
    std::memcpy(bytes.data(), raw.data(), raw.size());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArchiveError(ArchiveErrorKind::io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArchiveError(ArchiveErrorKind::io, "write failed for " + path.string());
}

std::string text_of_file(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

const Tensor& require_entry(const TensorMap& entries, const std::string& name, const Shape& shape) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw ModelError(name, "missing entry " + name);
    if (it->second.shape() != shape) {
        throw ModelError(name, "entry " + name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                                   shape_string(shape));
    }
    return it->second;
}

/// Packs W (in x out) and b (out) into an (in + 1) x out group.
Tensor affine_group(const Tensor& w, const Tensor& b) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    std::vector<double> data(w.data().begin(), w.data().end());
    data.insert(data.end(), b.data().begin(), b.data().end());
    return Tensor({in + 1, out}, std::move(data));
}

std::pair<Tensor, Tensor> split_affine(const Tensor& group) {
    const std::size_t in = group.dim(0) - 1, out = group.dim(1);
    const auto d = group.data();
    Tensor w({in, out}, std::vector<double>(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(in * out)));
    Tensor b({out}, std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(in * out), d.end()));
    return {std::move(w), std::move(b)};
}

/// Stacks gamma and beta into a 2 x E group.
Tensor norm_group(const Tensor& gamma, const Tensor& beta) {
    std::vector<double> data(gamma.data().begin(), gamma.data().end());
    data.insert(data.end(), beta.data().begin(), beta.data().end());
    return Tensor({2, gamma.size()}, std::move(data));
}

std::pair<Tensor, Tensor> split_norm(const Tensor& group) {
    auto [g, b] = split_affine(group);
    return {Tensor({g.size()}, std::vector<double>(g.data().begin(), g.data().end())), std::move(b)};
}

std::size_t as_index(double value, const char* what) {
    if (!(value >= 0.0) || value != std::floor(value) || value > 1e15) {
        throw ConfigError(std::string(what) + " must hold non-negative integers");
    }
    return static_cast<std::size_t>(value);
}

}  // namespace

std::vector<std::byte> encode_archive(std::span<const NamedTensor> entries) {
    std::set<std::string> seen;
    for (const auto& [name, tensor] : entries) {
        if (name.empty()) throw ArchiveError(ArchiveErrorKind::malformed, "entry names must be non-empty");
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw ArchiveError(ArchiveErrorKind::malformed, "entry name too long");
        }
        if (!valid_utf8(std::as_bytes(std::span(name.data(), name.size())))) {
            throw ArchiveError(ArchiveErrorKind::malformed, "entry name is not UTF-8");
        }
        if (!seen.insert(name).second) throw ArchiveError(ArchiveErrorKind::duplicate_name, name);
        if (tensor.rank() > max_rank) throw ArchiveError(ArchiveErrorKind::malformed, "rank above 8 for " + name);
    }

    std::vector<std::byte> out;
    out.push_back(std::byte{'C'});
    out.push_back(std::byte{'P'});
    out.push_back(std::byte{'V'});
    out.push_back(std::byte{'T'});
    put<std::uint16_t>(out, archive_version);
    put<std::uint16_t>(out, 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));

    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : entries) {
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        for (char c : name) out.push_back(static_cast<std::byte>(c));
        put<std::uint8_t>(out, dtype_f64);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
        for (auto d : tensor.shape()) put<std::uint64_t>(out, d);
        put<std::uint64_t>(out, offset);
        offset += 8 * tensor.size();
    }
    put<std::uint64_t>(out, offset);
    for (const auto& entry : entries) {
        for (double v : entry.second.data()) put_double(out, v);
    }
    return out;
}

std::vector<std::byte> encode_archive(const TensorMap& entries) {
    std::vector<NamedTensor> ordered(entries.begin(), entries.end());
    return encode_archive(std::span<const NamedTensor>(ordered));
}

TensorMap decode_archive(std::span<const std::byte> bytes) {
    Reader reader(bytes);
    const auto magic = reader.take(4, "magic");
    if (std::memcmp(magic.data(), "CPVT", 4) != 0) {
        throw ArchiveError(ArchiveErrorKind::bad_magic, "file does not start with CPVT");
    }
    const auto version = reader.get<std::uint16_t>("version");
    if (version != archive_version) {
        throw ArchiveError(ArchiveErrorKind::unsupported_version,
                           "version " + std::to_string(version) + ", expected " + std::to_string(archive_version));
    }
    if (reader.get<std::uint16_t>("reserved") != 0) {
        throw ArchiveError(ArchiveErrorKind::malformed, "reserved header field is not zero");
    }
    const auto count = reader.get<std::uint32_t>("entry count");

    std::vector<EntryHeader> headers;
    std::set<std::string> names;
    for (std::uint32_t e = 0; e < count; ++e) {
        EntryHeader header;
        const auto name_len = reader.get<std::uint16_t>("name length");
        if (name_len == 0) throw ArchiveError(ArchiveErrorKind::malformed, "empty entry name");
        const auto name = reader.take(name_len, "entry name");
        if (!valid_utf8(name)) throw ArchiveError(ArchiveErrorKind::malformed, "entry name is not UTF-8");
        header.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
        if (!names.insert(header.name).second) throw ArchiveError(ArchiveErrorKind::duplicate_name, header.name);

        const auto dtype = reader.get<std::uint8_t>("dtype");
        if (dtype != dtype_f64) {
            throw ArchiveError(ArchiveErrorKind::malformed, "unsupported dtype " + std::to_string(dtype) + " for " +
                                                                 header.name);
        }
        const auto rank = reader.get<std::uint8_t>("rank");
        if (rank > max_rank) throw ArchiveError(ArchiveErrorKind::malformed, "rank above 8 for " + header.name);
        std::uint64_t elements = 1;
        for (std::uint8_t r = 0; r < rank; ++r) {
            const auto d = reader.get<std::uint64_t>("dimension");
            if (d != 0 && elements > std::numeric_limits<std::uint64_t>::max() / 8 / d) {
                throw ArchiveError(ArchiveErrorKind::malformed, "dimensions overflow for " + header.name);
            }
            elements *= d;
            header.shape.push_back(static_cast<std::size_t>(d));
        }
        header.offset = reader.get<std::uint64_t>("offset");
        if (header.offset % 8 != 0) throw ArchiveError(ArchiveErrorKind::malformed, "misaligned offset for " + header.name);
        header.bytes = elements * 8;
        headers.push_back(std::move(header));
    }

    const auto payload_size = reader.get<std::uint64_t>("payload size");
    if (payload_size > reader.remaining()) {
        throw ArchiveError(ArchiveErrorKind::truncated, "payload declares " + std::to_string(payload_size) +
                                                            " bytes, " + std::to_string(reader.remaining()) +
                                                            " present");
    }
    if (payload_size < reader.remaining()) {
        throw ArchiveError(ArchiveErrorKind::malformed, "trailing bytes after payload");
    }
    const auto payload = reader.take(static_cast<std::size_t>(payload_size), "payload");

    std::vector<const EntryHeader*> by_offset;
    for (const auto& h : headers) {
        if (h.offset > payload_size || h.bytes > payload_size - h.offset) {
            throw ArchiveError(ArchiveErrorKind::malformed, "entry " + h.name + " extends past the payload");
        }
        by_offset.push_back(&h);
    }
    std::sort(by_offset.begin(), by_offset.end(), [](const EntryHeader* a, const EntryHeader* b) {
        return a->offset < b->offset || (a->offset == b->offset && a->bytes < b->bytes);
    });
    for (std::size_t i = 1; i < by_offset.size(); ++i) {
        const auto* prev = by_offset[i - 1];
        if (prev->bytes > 0 && by_offset[i]->offset < prev->offset + prev->bytes) {
            throw ArchiveError(ArchiveErrorKind::malformed,
                               "entries " + prev->name + " and " + by_offset[i]->name + " overlap");
        }
    }

    TensorMap entries;
    for (const auto& h : headers) {
        std::vector<double> data(static_cast<std::size_t>(h.bytes / 8));
        Reader body(payload.subspan(static_cast<std::size_t>(h.offset), static_cast<std::size_t>(h.bytes)));
        for (auto& v : data) v = std::bit_cast<double>(body.get<std::uint64_t>("tensor data"));
        entries.emplace(h.name, Tensor(h.shape, std::move(data)));
    }
    return entries;
}

void save_archive(const TensorMap& entries, const std::filesystem::path& path) {
    write_file(path, encode_archive(entries));
}

TensorMap load_archive(const std::filesystem::path& path) { return decode_archive(read_file(path)); }

TensorMap encoder_to_archive(const EncoderWeights& weights) {
    weights.validate();
    TensorMap entries;
    for (std::size_t i = 0; i < weights.layers.size(); ++i) {
        const auto& lw = weights.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        entries.emplace(p + "wq", affine_group(lw.wq, lw.bq));
        entries.emplace(p + "wk", affine_group(lw.wk, lw.bk));
        entries.emplace(p + "wv", affine_group(lw.wv, lw.bv));
        entries.emplace(p + "wo", affine_group(lw.wo, lw.bo));
        entries.emplace(p + "ffn1", affine_group(lw.w1, lw.b1));
        entries.emplace(p + "ffn2", affine_group(lw.w2, lw.b2));
        entries.emplace(p + "ln1", norm_group(lw.ln1_gamma, lw.ln1_beta));
        entries.emplace(p + "ln2", norm_group(lw.ln2_gamma, lw.ln2_beta));
    }
    if (weights.classifier) {
        entries.emplace("head.norm", norm_group(weights.classifier->norm_gamma, weights.classifier->norm_beta));
        entries.emplace("head.fc", affine_group(weights.classifier->w, weights.classifier->b));
    }
    return entries;
}

EncoderWeights encoder_from_archive(const EncoderConfig& config, const TensorMap& entries) {
    config.validate();
    const std::size_t e = config.embed_dim, f = config.ffn_hidden;
    EncoderWeights weights;
    weights.config = config;
    for (std::size_t i = 0; i < config.num_layers; ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        LayerWeights lw;
        std::tie(lw.wq, lw.bq) = split_affine(require_entry(entries, p + "wq", {e + 1, e}));
        std::tie(lw.wk, lw.bk) = split_affine(require_entry(entries, p + "wk", {e + 1, e}));
        std::tie(lw.wv, lw.bv) = split_affine(require_entry(entries, p + "wv", {e + 1, e}));
        std::tie(lw.wo, lw.bo) = split_affine(require_entry(entries, p + "wo", {e + 1, e}));
        std::tie(lw.w1, lw.b1) = split_affine(require_entry(entries, p + "ffn1", {e + 1, f}));
        std::tie(lw.w2, lw.b2) = split_affine(require_entry(entries, p + "ffn2", {f + 1, e}));
        std::tie(lw.ln1_gamma, lw.ln1_beta) = split_norm(require_entry(entries, p + "ln1", {2, e}));
        std::tie(lw.ln2_gamma, lw.ln2_beta) = split_norm(require_entry(entries, p + "ln2", {2, e}));
        weights.layers.push_back(std::move(lw));
    }
    if (config.num_classes > 0) {
        Classifier head;
        std::tie(head.norm_gamma, head.norm_beta) = split_norm(require_entry(entries, "head.norm", {2, e}));
        std::tie(head.w, head.b) = split_affine(require_entry(entries, "head.fc", {e + 1, config.num_classes}));
        weights.classifier = std::move(head);
    }
    weights.validate();
    return weights;
}

std::string config_to_json(const EncoderConfig& config) {
    nlohmann::ordered_json j;
    j["format"] = "cpvt-encoder";
    j["version"] = 1;
    j["num_layers"] = config.num_layers;
    j["num_heads"] = config.num_heads;
    j["seq_len"] = config.seq_len;
    j["head_dim"] = config.head_dim;
    j["embed_dim"] = config.embed_dim;
    j["ffn_hidden"] = config.ffn_hidden;
    j["num_classes"] = config.num_classes;
    j["ln_eps"] = config.ln_eps;
    j["norm_layout"] = "pre";
    j["gelu"] = "tanh";
    return j.dump(2) + "\n";
}

EncoderConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& err) {
        throw ConfigError(std::string("encoder config is not valid JSON: ") + err.what());
    }
    if (!j.is_object()) throw ConfigError("encoder config must be a JSON object");
    if (j.value("format", std::string{}) != "cpvt-encoder") throw ConfigError("encoder config: format must be cpvt-encoder");
    if (j.value("version", 0) != 1) throw ConfigError("encoder config: unsupported version");
    if (j.contains("gelu") && j["gelu"] != "tanh") throw ConfigError("encoder config: only gelu = tanh is supported");
    if (j.contains("norm_layout") && j["norm_layout"] != "pre") {
        throw ConfigError("encoder config: only norm_layout = pre is supported");
    }
    auto field = [&](const char* key) -> std::size_t {
        if (!j.contains(key) || !j[key].is_number_unsigned()) {
            throw ConfigError(std::string("encoder config: missing or non-integer field ") + key);
        }
        return j[key].get<std::size_t>();
    };
    EncoderConfig config;
    config.num_layers = field("num_layers");
    config.num_heads = field("num_heads");
    config.seq_len = field("seq_len");
    config.head_dim = field("head_dim");
    config.embed_dim = field("embed_dim");
    config.ffn_hidden = field("ffn_hidden");
    config.num_classes = j.contains("num_classes") ? field("num_classes") : 0;
    if (j.contains("ln_eps")) {
        if (!j["ln_eps"].is_number()) throw ConfigError("encoder config: ln_eps must be a number");
        config.ln_eps = j["ln_eps"].get<double>();
    }
    config.validate();
    return config;
}

void save_encoder(const EncoderWeights& weights, const std::filesystem::path& base) {
    auto archive = base;
    auto sidecar = base;
    archive.replace_extension(".cpvt");
    sidecar.replace_extension(".json");
    save_archive(encoder_to_archive(weights), archive);
    const std::string text = config_to_json(weights.config);
    write_file(sidecar, std::as_bytes(std::span(text.data(), text.size())));
}

EncoderWeights load_encoder(const std::filesystem::path& path) {
    auto archive = path;
    auto sidecar = path;
    archive.replace_extension(".cpvt");
    sidecar.replace_extension(".json");
    const EncoderConfig config = config_from_json(text_of_file(sidecar));
    return encoder_from_archive(config, load_archive(archive));
}

InputBundle load_inputs(const std::filesystem::path& path) {
    const TensorMap entries = load_archive(path);
    InputBundle bundle;
    if (const auto it = entries.find("input"); it != entries.end()) {
        if (it->second.rank() != 2) throw ConfigError("input must be an L x E matrix");
        bundle.inputs.push_back(it->second);
    } else if (const auto batch = entries.find("inputs"); batch != entries.end()) {
        if (batch->second.rank() != 3) throw ConfigError("inputs must be an N x L x E tensor");
        for (std::size_t n = 0; n < batch->second.dim(0); ++n) bundle.inputs.push_back(batch->second.slice(n));
    } else {
        throw ConfigError("input archive has neither 'input' nor 'inputs'");
    }
    if (const auto it = entries.find("labels"); it != entries.end()) {
        if (it->second.size() != bundle.inputs.size()) throw ConfigError("labels length does not match inputs");
        for (double v : it->second.data()) bundle.labels.push_back(as_index(v, "labels"));
    }
    if (const auto it = entries.find("reference_logits"); it != entries.end()) {
        if (it->second.rank() != 2 || it->second.dim(0) != bundle.inputs.size()) {
            throw ConfigError("reference_logits must be N x C");
        }
        for (std::size_t n = 0; n < it->second.dim(0); ++n) bundle.reference_logits.push_back(it->second.slice(n));
    }
    for (const auto& input : bundle.inputs) {
        if (!input.all_finite()) throw ConfigError("inputs contain non-finite values");
    }
    return bundle;
}

void save_inputs(const InputBundle& bundle, const std::filesystem::path& path) {
    if (bundle.inputs.empty()) throw ConfigError("save_inputs: empty bundle");
    TensorMap entries;
    const Shape sample = bundle.inputs.front().shape();
    std::vector<double> stacked;
    for (const auto& input : bundle.inputs) {
        if (input.shape() != sample) throw DimensionError("save_inputs: inputs differ in shape");
        stacked.insert(stacked.end(), input.data().begin(), input.data().end());
    }
    Shape shape{bundle.inputs.size()};
    shape.insert(shape.end(), sample.begin(), sample.end());
    entries.emplace("inputs", Tensor(std::move(shape), std::move(stacked)));
    if (!bundle.labels.empty()) {
        std::vector<double> labels(bundle.labels.begin(), bundle.labels.end());
        entries.emplace("labels", Tensor::vector(std::move(labels)));
    }
    if (!bundle.reference_logits.empty()) {
        std::vector<double> logits;
        for (const auto& l : bundle.reference_logits) logits.insert(logits.end(), l.data().begin(), l.data().end());
        entries.emplace("reference_logits",
                        Tensor({bundle.reference_logits.size(), bundle.reference_logits.front().size()},
                               std::move(logits)));
    }
    save_archive(entries, path);
}

}  // namespace cpvit
