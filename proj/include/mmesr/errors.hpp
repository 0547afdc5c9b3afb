#ifndef MMESR_ERRORS_HPP
#define MMESR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mmesr
{

// Malformed or inconsistent input data (files, traces, fit inputs).
class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// A fit has no well-defined solution for the given data (flat trace,
// singular Jacobian, crossing not present in the points).
class UnfittableError : public DataError
{
public:
    using DataError::DataError;
};

} // namespace mmesr

#endif
