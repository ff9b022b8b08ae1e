#pragma once

#include <stdexcept>
#include <string>

namespace facefit {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

} // namespace facefit
