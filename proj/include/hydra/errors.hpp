#pragma once

#include <stdexcept>
#include <string>

namespace hydra {

/// Root of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class VocabError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class PlanError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class DegenerateError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or latent encountered during training or sampling.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CheckpointVersionError : public Error {
public:
    using Error::Error;
};

class CheckpointShapeError : public Error {
public:
    using Error::Error;
};

class HashChainError : public Error {
public:
    using Error::Error;
};

} // namespace hydra
