#ifndef MIPL_ERRORS_HPP
#define MIPL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mipl {

// Base for every error the library throws. CLI maps subtypes to exit codes:
// numeric_error -> 2, everything else -> 1.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between operands (reports both shapes).
struct dim_error : error {
    using error::error;
};

// Input outside an op's documented domain (log of a non-positive entry, ...).
struct domain_error : error {
    using error::error;
};

// Invalid user-supplied configuration (flags, hyperparameters, dataset choice).
struct config_error : error {
    using error::error;
};

// API misuse: a documented precondition was violated by the caller.
struct contract_error : error {
    using error::error;
};

// Malformed input file: not parseable at all (carries a line number).
struct parse_error : error {
    using error::error;
};

// Parseable input that violates the documented schema.
struct schema_error : error {
    using error::error;
};

// Non-finite value where the pipeline requires finite ones; aborts a run.
struct numeric_error : error {
    using error::error;
};

} // namespace mipl

#endif
