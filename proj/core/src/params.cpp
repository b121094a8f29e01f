#include "quietroom/params.hpp"

#include "quietroom/binio.hpp"
#include "quietroom/error.hpp"

namespace quietroom {

Matrix& Parameters::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (contains(name)) throw ConfigError("duplicate parameter block " + name);
    names_.push_back(name);
    values_.emplace_back(Matrix::Zero(rows, cols));
    return values_.back();
}

bool Parameters::contains(const std::string& name) const {
    for (const auto& n : names_)
        if (n == name) return true;
    return false;
}

std::size_t Parameters::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    throw ConfigError("no parameter block named " + name);
}

Parameters Parameters::zeros_like() const {
    Parameters out;
    out.names_ = names_;
    out.values_.reserve(values_.size());
    for (const auto& v : values_) out.values_.emplace_back(Matrix::Zero(v.rows(), v.cols()));
    return out;
}

void Parameters::set_zero() {
    for (auto& v : values_) v.setZero();
}

bool Parameters::same_layout(const Parameters& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols()) return false;
    return true;
}

bool Parameters::all_finite() const {
    for (const auto& v : values_)
        if (!v.allFinite()) return false;
    return true;
}

std::size_t Parameters::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
}

double& Parameters::scalar(std::size_t index) {
    for (auto& v : values_) {
        const auto n = static_cast<std::size_t>(v.size());
        if (index < n) return v.data()[index];
        index -= n;
    }
    throw ConfigError("parameter scalar index out of range");
}

Parameters& Parameters::operator+=(const Parameters& other) {
    if (!same_layout(other)) throw ConfigError("parameter layout mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

Parameters& Parameters::operator*=(double s) {
    for (auto& v : values_) v *= s;
    return *this;
}

namespace {
constexpr std::string_view kMagic = "QRPARAMS";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_parameters(const std::string& path, const Parameters& params, const nlohmann::json& metadata) {
    binio::Writer w;
    w.bytes(kMagic);
    w.u32(kVersion);
    w.u32(0);
    const auto meta = metadata.dump();
    w.u64(meta.size());
    w.bytes(meta);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.name(i);
        const auto& m = params[i];
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u64(static_cast<std::uint64_t>(m.rows()));
        w.u64(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index k = 0; k < m.size(); ++k) w.f64(m.data()[k]);
    }
    binio::write_file(path, w.data());
}

ParameterFile read_parameters(const std::string& path) {
    const auto raw = binio::read_file(path);
    binio::Reader r(raw);
    auto magic = r.bytes(kMagic.size());
    if (std::string_view(reinterpret_cast<const char*>(magic.data()), magic.size()) != kMagic)
        throw DataError(path + ": not a parameter file");
    if (r.u32() != kVersion) throw DataError(path + ": unsupported parameter file version");
    r.u32();
    const auto meta_len = r.u64();
    if (meta_len > r.remaining()) throw DataError(path + ": truncated metadata");
    auto meta = r.bytes(meta_len);
    ParameterFile out;
    try {
        out.metadata = nlohmann::json::parse(meta.begin(), meta.end());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": bad metadata: " + e.what());
    }
    const auto blocks = r.u32();
    for (std::uint32_t b = 0; b < blocks; ++b) {
        const auto len = r.u32();
        auto name_bytes = r.bytes(len);
        std::string name(reinterpret_cast<const char*>(name_bytes.data()), name_bytes.size());
        const auto rows = r.u64();
        const auto cols = r.u64();
        if (cols != 0 && rows > r.remaining() / 8 / cols) throw DataError(path + ": truncated block " + name);
        auto& m = out.params.add(name, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f64();
    }
    if (r.remaining() != 0) throw DataError(path + ": trailing bytes after parameter blocks");
    return out;
}

}  // namespace quietroom
