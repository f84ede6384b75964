#include "mipl/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "mipl/errors.hpp"

namespace mipl::ad {

namespace {

struct Eval {
    double value;
    double min_margin;
};

Eval evaluate(const ScalarBuilder& f, const std::vector<Matrix>& params) {
    Tape tape;
    std::vector<NodePtr> leaves;
    leaves.reserve(params.size());
    for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
    NodePtr root = f(tape, leaves);
    if (root->value.rows != 1 || root->value.cols != 1)
        throw contract_error("gradcheck: builder must return a 1x1 scalar");
    return {root->value.data[0], tape.min_max_margin()};
}

} // namespace

GradcheckReport gradcheck(const ScalarBuilder& f, std::vector<Matrix> params,
                          double h, double tol) {
    if (!(h > 0.0)) throw config_error("gradcheck: step h must be positive");
    if (!(tol > 0.0)) throw config_error("gradcheck: tolerance must be positive");

    GradcheckReport report;

    // Analytic pass: one forward + one backward at the base point.
    Tape tape;
    std::vector<NodePtr> leaves;
    leaves.reserve(params.size());
    for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
    NodePtr root = f(tape, leaves);
    if (root->value.rows != 1 || root->value.cols != 1)
        throw contract_error("gradcheck: builder must return a 1x1 scalar");
    tape.backward(root);
    report.base_near_tie = tape.min_max_margin() < 2.0 * h;

    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double saved = params[p].data[i];
            params[p].data[i] = saved + h;
            const Eval up = evaluate(f, params);
            params[p].data[i] = saved - h;
            const Eval dn = evaluate(f, params);
            params[p].data[i] = saved;

            GradcheckEntry e;
            e.param = static_cast<int>(p);
            e.index = static_cast<int>(i);
            e.analytic = leaves[p]->grad.data[i];
            e.numeric = (up.value - dn.value) / (2.0 * h);
            e.rel_err = std::abs(e.analytic - e.numeric) /
                        std::max({1.0, std::abs(e.analytic), std::abs(e.numeric)});

            if (std::min(up.min_margin, dn.min_margin) < 2.0 * h) {
                report.skipped.push_back(e);
                continue;
            }
            ++report.checked;
            report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
            if (e.rel_err > tol) report.failures.push_back(e);
        }
    }
    return report;
}

std::string GradcheckReport::to_string() const {
    std::ostringstream os;
    os << "gradcheck: " << checked << " coordinates checked, max relative error "
       << max_rel_err << ", " << failures.size() << " failures, "
       << skipped.size() << " skipped near max ties";
    if (base_near_tie) os << " (base point sits near a max tie)";
    for (const auto& e : failures)
        os << "\n  FAIL param " << e.param << " index " << e.index
           << " analytic " << e.analytic << " numeric " << e.numeric
           << " rel_err " << e.rel_err;
    for (const auto& e : skipped)
        os << "\n  skip param " << e.param << " index " << e.index
           << " (nondifferentiable point)";
    return os.str();
}

} // namespace mipl::ad
