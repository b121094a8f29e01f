#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "quietroom/matrix_io.hpp"

namespace quietroom {

/// Ordered set of named parameter matrices. Gradients and Adam moments use
/// the same layout (see zeros_like).
class Parameters {
public:
    Matrix& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

    std::size_t size() const { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Matrix& operator[](std::size_t i) { return values_[i]; }
    const Matrix& operator[](std::size_t i) const { return values_[i]; }

    bool contains(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;
    Matrix& at(const std::string& name) { return values_[index_of(name)]; }
    const Matrix& at(const std::string& name) const { return values_[index_of(name)]; }

    Parameters zeros_like() const;
    void set_zero();
    bool same_layout(const Parameters& other) const;
    bool all_finite() const;

    /// Total scalar count across all blocks.
    std::size_t scalar_count() const;
    /// Scalar by global index (blocks in order, row-major within a block).
    double& scalar(std::size_t index);

    Parameters& operator+=(const Parameters& other);
    Parameters& operator*=(double s);

private:
    std::vector<std::string> names_;
    std::vector<Matrix> values_;
};

/// Flat parameter file:
///
///   "QRPARAMS" | u32 version (1) | u32 0 | u64 n | n bytes JSON metadata |
///   u32 blocks | per block: u32 name_len | name | u64 rows | u64 cols |
///   f64 values row-major
///
/// Little-endian throughout.
void write_parameters(const std::string& path, const Parameters& params, const nlohmann::json& metadata);

struct ParameterFile {
    Parameters params;
    nlohmann::json metadata;
};

ParameterFile read_parameters(const std::string& path);

}  // namespace quietroom
