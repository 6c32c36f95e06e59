#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace dicho {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

template <typename Scalar>
constexpr Scalar infinity() {
    return std::numeric_limits<Scalar>::infinity();
}

/// Dense matrix with declared dimensions; the carrier for every operator
/// value that crosses a module boundary.
template <typename Scalar = double>
struct DenseOperator {
    MatX<Scalar> matrix;
    Index domain_dim = 0;
    Index codomain_dim = 0;

    DenseOperator() = default;
    explicit DenseOperator(MatX<Scalar> m)
        : matrix(std::move(m)), domain_dim(matrix.cols()), codomain_dim(matrix.rows()) {}

    [[nodiscard]] bool shape_consistent() const {
        return matrix.rows() == codomain_dim && matrix.cols() == domain_dim;
    }
};

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps ValidationError (and subclasses) to exit code
// 2 and NumericalError (and subclasses) to exit code 3.
// ---------------------------------------------------------------------------

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : ValidationError {
    using ValidationError::ValidationError;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotHyperbolic : NumericalError {
    using NumericalError::NumericalError;
};

struct TailTooLarge : NumericalError {
    using NumericalError::NumericalError;
};

struct ContractionViolated : NumericalError {
    using NumericalError::NumericalError;
};

struct InvalidInitialData : ValidationError {
    using ValidationError::ValidationError;
};

struct SplittingNotCertified : NumericalError {
    using NumericalError::NumericalError;
};

struct ConfinementViolated : NumericalError {
    using NumericalError::NumericalError;
};

struct PrerequisiteMissing : ValidationError {
    using ValidationError::ValidationError;
};

struct StiffnessError : NumericalError {
    using NumericalError::NumericalError;
};

}  // namespace dicho
