#ifndef CPL_TYPES_HPP_
#define CPL_TYPES_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <limits>

namespace cpl {

using Index = Eigen::Index;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using ArrayXX = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// All pool/head state is kept in double precision; envelope comparisons rely
// on strict IEEE-754 inequalities.
using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using BoolArray = ArrayXX<bool>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Slack added to the strict gap-forcing inequality; errs toward abstention.
inline constexpr double kNumericSlack = 1e-9;

}  // namespace cpl

#endif  // CPL_TYPES_HPP_
