#pragma once

#include <stdexcept>
#include <string>

namespace rost {

// Bad argument values: negative counts, weights that do not sum to one,
// powers < 1, atoms outside [0,1), and similar.
class InvalidParameter : public std::invalid_argument {
public:
    explicit InvalidParameter(const std::string& what)
        : std::invalid_argument(what) {}
};

// Structural defects of an overlap matrix: asymmetry, off-unit diagonal,
// entries outside [-1,1], inconsistent near-duplicate cliques.
class MalformedOverlap : public std::runtime_error {
public:
    explicit MalformedOverlap(const std::string& what)
        : std::runtime_error(what) {}
};

// A numeric routine could not produce a trustworthy result, e.g. a Gaussian
// factorization that stays indefinite after the jitter schedule is exhausted.
class NumericalFailure : public std::runtime_error {
public:
    explicit NumericalFailure(const std::string& what)
        : std::runtime_error(what) {}
};

// A requested computation exceeds the configured size or iteration caps.
class BudgetExceeded : public std::runtime_error {
public:
    explicit BudgetExceeded(const std::string& what)
        : std::runtime_error(what) {}
};

} // namespace rost
