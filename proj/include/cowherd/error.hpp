#pragma once

#include <stdexcept>
#include <string>

namespace cowherd {

//! Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Invalid input: bad parameters, values outside a domain, malformed files.
class ValidationError : public Error
{
public:
  using Error::Error;
};

class DomainError : public ValidationError
{
public:
  using ValidationError::ValidationError;
};

//! Two grids or matrices that must agree in shape do not.
class ShapeError : public ValidationError
{
public:
  using ValidationError::ValidationError;
};

//! A numerical procedure could not produce a result.
class NumericalError : public Error
{
public:
  using Error::Error;
};

//! A Gram / design matrix is singular or too ill-conditioned to invert.
class RankDeficientError : public NumericalError
{
public:
  using NumericalError::NumericalError;
};

//! Weights or mixture components collapsed (zero mass, all-zero weights).
class DegenerateError : public NumericalError
{
public:
  using NumericalError::NumericalError;
};

} // namespace cowherd
