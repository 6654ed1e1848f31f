#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace acs
{
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using IndexList = std::vector<int>;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error
{
public:
    using Error::Error;
};

/// NaN/Inf encountered in inputs or intermediate results.
class NumericError : public Error
{
public:
    using Error::Error;
};

/// A forward cache does not belong to the parameters or batch it is used with.
class CacheError : public Error
{
public:
    using Error::Error;
};

/// The maximizer of an inner problem is not unique.
class DegeneracyError : public Error
{
public:
    using Error::Error;
};

/// An iterative solver failed to reach its tolerance.
class SolverError : public Error
{
public:
    SolverError(const std::string& what, double residual)
        : Error(what), final_residual(residual)
    {
    }
    double final_residual;
};

/// Malformed file or configuration text; line is 1-based (0 when not applicable).
class ParseError : public Error
{
public:
    ParseError(const std::string& what, std::size_t line_no)
        : Error(line_no ? "line " + std::to_string(line_no) + ": " + what : what),
          line(line_no)
    {
    }
    std::size_t line;
};

/// Invalid argument or precondition violation.
class InvalidArgument : public Error
{
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message)
{
    if (!condition)
        throw InvalidArgument(message);
}

inline std::uint64_t fnv1a64(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text)
    {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

} // namespace acs
