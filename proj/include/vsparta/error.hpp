#pragma once

#include <stdexcept>
#include <string>

namespace vsparta {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration or arguments supplied by the caller.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Problems with input data: shapes, files, vocabularies.
class DataError : public Error {
public:
    using Error::Error;
};

class DimensionError : public DataError {
public:
    using DataError::DataError;
};

class GeometryError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class CorruptDataError : public DataError {
public:
    using DataError::DataError;
};

class VocabError : public DataError {
public:
    using DataError::DataError;
};

class VocabMismatchError : public DataError {
public:
    using DataError::DataError;
};

class SequenceLengthError : public DataError {
public:
    using DataError::DataError;
};

class DuplicateError : public DataError {
public:
    using DataError::DataError;
};

class UnavailableError : public DataError {
public:
    using DataError::DataError;
};

/// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace vsparta
