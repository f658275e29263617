#pragma once

#include <stdexcept>
#include <string>

namespace mira {

// Error taxonomy used across the library. Shape/contract/config errors are
// programming or input mistakes; numeric errors abort a run; io errors carry
// file-level diagnostics.

struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

struct corruption_error : io_error {
    explicit corruption_error(const std::string& msg) : io_error("corruption: " + msg) {}
};

struct degenerate_retrieval_error : std::runtime_error {
    explicit degenerate_retrieval_error(const std::string& msg)
        : std::runtime_error("degenerate retrieval: " + msg) {}
};

inline void check_shape(bool cond, const std::string& msg) {
    if (!cond) throw shape_error(msg);
}

inline void check_contract(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

inline void check_config(bool cond, const std::string& msg) {
    if (!cond) throw config_error(msg);
}

}  // namespace mira
