#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

namespace quietroom {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Marks a matrix file as released under the Laplace mechanism.
struct DpTag {
    double clip_bound = 0.0;
    double epsilon = 0.0;
};

/// Binary matrix file:
///
///   offset  size  field
///   0       8     magic "QRMATRIX"
///   8       4     u32 version (1)
///   12      4     u32 flags (bit 0: DP-protected)
///   16      8     u64 rows
///   24      8     u64 cols
///   32      8     f64 clip bound C (0 unless DP-protected)
///   40      8     f64 epsilon (0 unless DP-protected)
///   48      8*r*c f64 values, row-major
///
/// All integers and floats are little-endian.
struct MatrixFile {
    Matrix values;
    std::optional<DpTag> dp;
};

void write_matrix(const std::string& path, const Matrix& values, std::optional<DpTag> dp = std::nullopt);
MatrixFile read_matrix(const std::string& path);

/// Plain CSV, one row per line, for inspection only.
void write_matrix_csv(const std::string& path, const Matrix& values);

}  // namespace quietroom
