#ifndef MIPL_GRADCHECK_HPP
#define MIPL_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "mipl/matrix.hpp"
#include "mipl/tape.hpp"

namespace mipl::ad {

// Builds a 1x1 loss node on the given tape from leaf nodes wrapping the
// parameter matrices. Must be re-evaluable at perturbed parameters.
using ScalarBuilder =
    std::function<NodePtr(Tape&, const std::vector<NodePtr>&)>;

struct GradcheckEntry {
    int param;      // which matrix
    int index;      // flat index within it
    double analytic;
    double numeric;
    double rel_err;
};

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::vector<GradcheckEntry> failures; // entries above tolerance
    std::vector<GradcheckEntry> skipped;  // near a max tie, not comparable
    int checked = 0;
    bool base_near_tie = false; // a max_over at the base point sat within 2h

    bool ok() const { return failures.empty(); }
    std::string to_string() const;
};

// Central-difference check of every parameter coordinate: compares the tape
// gradient of f at params against (f(+h) - f(-h)) / 2h. Relative error uses
// |a - b| / max(1, |a|, |b|). Coordinates where any involved evaluation sees
// a max_over winner/runner-up gap below 2h are skipped and reported as such;
// the comparison is meaningless across a subgradient switch.
GradcheckReport gradcheck(const ScalarBuilder& f, std::vector<Matrix> params,
                          double h, double tol);

} // namespace mipl::ad

#endif
