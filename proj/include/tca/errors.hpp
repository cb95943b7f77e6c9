#pragma once

#include <stdexcept>
#include <string>

namespace tca {

// Every failure raised by the engine derives from Error so callers can
// report it uniformly; the subclasses tell tests which contract broke.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DegenerateVectorError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

// A condensation hook returned a token set that breaks its count contract.
class ContractError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class ArchiveError : public Error {
public:
    using Error::Error;
};

}  // namespace tca
