#include "quietroom/matrix_io.hpp"

#include <fstream>
#include <iomanip>

#include "quietroom/binio.hpp"
#include "quietroom/error.hpp"

namespace quietroom {

namespace binio {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("short write to " + path);
}

}  // namespace binio

namespace {
constexpr std::string_view kMagic = "QRMATRIX";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagDp = 1u;
}  // namespace

void write_matrix(const std::string& path, const Matrix& values, std::optional<DpTag> dp) {
    binio::Writer w;
    w.bytes(kMagic);
    w.u32(kVersion);
    w.u32(dp ? kFlagDp : 0u);
    w.u64(static_cast<std::uint64_t>(values.rows()));
    w.u64(static_cast<std::uint64_t>(values.cols()));
    w.f64(dp ? dp->clip_bound : 0.0);
    w.f64(dp ? dp->epsilon : 0.0);
    for (Eigen::Index r = 0; r < values.rows(); ++r)
        for (Eigen::Index c = 0; c < values.cols(); ++c) w.f64(values(r, c));
    binio::write_file(path, w.data());
}

MatrixFile read_matrix(const std::string& path) {
    const auto raw = binio::read_file(path);
    binio::Reader r(raw);
    auto magic = r.bytes(kMagic.size());
    if (std::string_view(reinterpret_cast<const char*>(magic.data()), magic.size()) != kMagic)
        throw DataError(path + ": not a matrix file");
    if (r.u32() != kVersion) throw DataError(path + ": unsupported matrix version");
    const auto flags = r.u32();
    const auto rows = r.u64();
    const auto cols = r.u64();
    const double clip = r.f64();
    const double eps = r.f64();
    if (cols != 0 && rows > r.remaining() / 8 / cols) throw DataError(path + ": truncated matrix data");
    if (rows * cols * 8 != r.remaining()) throw DataError(path + ": matrix size does not match header");

    MatrixFile out;
    out.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < out.values.rows(); ++i)
        for (Eigen::Index j = 0; j < out.values.cols(); ++j) out.values(i, j) = r.f64();
    if (flags & kFlagDp) out.dp = DpTag{clip, eps};
    return out;
}

void write_matrix_csv(const std::string& path, const Matrix& values) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << std::setprecision(17);
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            if (c) out << ',';
            out << values(r, c);
        }
        out << '\n';
    }
}

}  // namespace quietroom
