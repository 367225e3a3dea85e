// sos.hpp -- pseudoexpectation relaxation over subset selectors.
//
// The objects here model a linear functional pE on polynomials in boolean
// selector variables w_1..w_n, represented by a positive semidefinite moment
// matrix over the squarefree monomial basis (booleanity w_i^2 = w_i is baked
// into the basis map, so tied matrix cells share one underlying value).
//
// encode_axioms turns a data matrix into the selection axioms: normalization,
// the exact block-size row sum(w) = n/k together with its degree-compatible
// products, and one moment-closeness inequality per tensor order s <= t
// saying the selected points look like a whitened standard normal:
//
//   pE || (k/n) sum_i w_i z_i^{tensor s} - M_s ||_F^2 <= delta_eff,
//   z_i = W(x_i - center),  delta_eff = delta + c_corr * sqrt(eps).
//
// The quadratic expands into pair pseudomoments, so every constraint is a
// linear row over the monomial values.  Order-s rows are scaled by 1/s! to
// keep magnitudes comparable.  solve_feasible optimizes a degree-<=2 linear
// functional over this spectrahedron with an ADMM splitting: the y-step is a
// weighted least-squares projection onto the linear rows (cells tied by the
// basis map are averaged with their multiplicities), the S-step projects onto
// the PSD cone by eigenvalue clamping.  Any method meeting the tolerance
// contract would do; this one needs no external solver.  The returned moment
// matrix is the PSD iterate rescaled so pE 1 = 1 holds exactly, and every
// residual the contract cares about is measured and reported on the returned
// object rather than assumed.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "robustmix/common.hpp"
#include "robustmix/moments.hpp"

namespace robustmix {

struct Whitening {
    Matrix W;
    Vector center;
};

// ---------------------------------------------------------------------------
// WPolynomial: sparse polynomial in the selector variables.  A term lists its
// variable indices with repeats (so {i, i} means w_i^2); evaluation reduces
// repeats through booleanity.

struct WTerm {
    std::vector<int> vars;
    double coeff = 0.0;
};

struct WPolynomial {
    std::vector<WTerm> terms;

    static WPolynomial constant(double c) {
        WPolynomial p;
        p.terms.push_back({{}, c});
        return p;
    }

    static WPolynomial single(int i, double c = 1.0) {
        WPolynomial p;
        p.terms.push_back({{i}, c});
        return p;
    }

    static WPolynomial sum_over(const std::vector<int>& idx, double c = 1.0) {
        WPolynomial p;
        for (int i : idx) p.terms.push_back({{i}, c});
        return p;
    }

    WPolynomial& add_term(std::vector<int> vars, double coeff) {
        terms.push_back({std::move(vars), coeff});
        return *this;
    }

    int degree() const {
        int deg = 0;
        for (const auto& t : terms) deg = std::max(deg, static_cast<int>(t.vars.size()));
        return deg;
    }
};

// ---------------------------------------------------------------------------
// MonomialTable: ids for squarefree monomials of size <= max_size, laid out
// as size blocks (empty set first), colexicographic inside each block.  The
// layout only depends on sizes below the block, so a table truncated to a
// smaller max_size assigns the same ids.

class MonomialTable {
  public:
    MonomialTable() = default;

    MonomialTable(int n, int max_size) : n_(n), max_size_(max_size) {
        if (n < 0 || max_size < 0 || max_size > n)
            throw PreconditionFailed("MonomialTable: need 0 <= max_size <= n");
        choose_.assign(max_size + 1, std::vector<std::uint64_t>(n + 1, 0));
        for (int i = 0; i <= max_size; ++i)
            for (int v = 0; v <= n; ++v) choose_[i][v] = binomial_u64(v, i);
        offsets_.assign(max_size + 2, 0);
        for (int s = 0; s <= max_size; ++s)
            offsets_[s + 1] = offsets_[s] + static_cast<int>(binomial_u64(n, s));
    }

    int n() const { return n_; }
    int max_size() const { return max_size_; }
    int count() const { return offsets_[max_size_ + 1]; }
    int count_up_to(int size) const { return offsets_[size + 1]; }

    // sorted, duplicate-free, entries in [0, n)
    int id_of(const std::vector<int>& set) const {
        const int s = static_cast<int>(set.size());
        std::uint64_t rank = 0;
        for (int i = 0; i < s; ++i) rank += choose_[i + 1][set[i]];
        return offsets_[s] + static_cast<int>(rank);
    }

    std::vector<int> set_of(int id) const {
        int s = 0;
        while (id >= offsets_[s + 1]) ++s;
        std::uint64_t rank = static_cast<std::uint64_t>(id - offsets_[s]);
        std::vector<int> set(s);
        for (int i = s; i >= 1; --i) {
            // largest v with C(v, i) <= rank
            const auto& row = choose_[i];
            int lo = i - 1, hi = n_ - 1;
            while (lo < hi) {
                const int mid = (lo + hi + 1) / 2;
                if (row[mid] <= rank)
                    lo = mid;
                else
                    hi = mid - 1;
            }
            set[i - 1] = lo;
            rank -= row[lo];
        }
        return set;
    }

    // repeats allowed and folded; returns -1 when the support is too large
    int reduce_id(std::vector<int> vars) const {
        std::sort(vars.begin(), vars.end());
        vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
        if (static_cast<int>(vars.size()) > max_size_) return -1;
        return id_of(vars);
    }

  private:
    int n_ = 0;
    int max_size_ = 0;
    std::vector<int> offsets_{0, 1};
    std::vector<std::vector<std::uint64_t>> choose_{{1}};
};

// ---------------------------------------------------------------------------
// PseudoExpectation: moment matrix over the squarefree basis of monomials up
// to degree/2, plus the measured residual report from the solve that built
// it.  value() reads any monomial of raw degree <= degree by reducing it and
// looking up the canonical matrix cell.

struct PseudoExpectation {
    int degree = 2;
    int n = 0;
    int k = 1;
    Matrix moment_matrix;
    // per-tag worst constraint violation, each measured relative to the
    // row's scale (max of 1, |rhs| and the l2 norm of the coefficient vector)
    std::map<std::string, double> residuals;
    bool stalled = false;
    double objective_value = 0.0;
    int iterations = 0;

    double value(std::vector<int> vars) const {
        std::sort(vars.begin(), vars.end());
        vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
        const int s = static_cast<int>(vars.size());
        if (s > degree) throw DegreeTooHigh("PseudoExpectation::value: monomial support exceeds degree");
        const int half = (s + 1) / 2;
        const std::vector<int> a(vars.begin(), vars.begin() + half);
        const std::vector<int> b(vars.begin() + half, vars.end());
        return moment_matrix(basis_table.id_of(a), basis_table.id_of(b));
    }

    MonomialTable basis_table;
};

inline PseudoExpectation point_mass_pe(const std::vector<int>& indicator, int degree, int k) {
    if (degree != 2 && degree != 4)
        throw PreconditionFailed("point_mass_pe: degree must be 2 or 4");
    const int n = static_cast<int>(indicator.size());
    PseudoExpectation pe;
    pe.degree = degree;
    pe.n = n;
    pe.k = k;
    pe.basis_table = MonomialTable(n, degree / 2);
    const int B = pe.basis_table.count();
    Vector v(B);
    for (int id = 0; id < B; ++id) {
        double prod = 1.0;
        for (int i : pe.basis_table.set_of(id)) prod *= indicator[i];
        v(id) = prod;
    }
    pe.moment_matrix = v * v.transpose();
    return pe;
}

inline PseudoExpectation mixture_pe(const std::vector<std::vector<int>>& indicators,
                                    const std::vector<double>& weights, int degree, int k) {
    if (indicators.empty() || indicators.size() != weights.size())
        throw PreconditionFailed("mixture_pe: need one weight per indicator");
    PseudoExpectation pe = point_mass_pe(indicators[0], degree, k);
    pe.moment_matrix *= weights[0];
    for (std::size_t j = 1; j < indicators.size(); ++j) {
        pe.moment_matrix += weights[j] * point_mass_pe(indicators[j], degree, k).moment_matrix;
    }
    return pe;
}

inline double pe_eval(const PseudoExpectation& pe, const WPolynomial& poly) {
    if (poly.degree() > pe.degree)
        throw DegreeTooHigh("pe_eval: polynomial degree exceeds the pseudoexpectation degree");
    double total = 0.0;
    for (const auto& t : poly.terms) total += t.coeff * pe.value(t.vars);
    return total;
}

// ---------------------------------------------------------------------------
// LinearConstraint: one row over monomial values, either an equality or a
// less-or-equal.  Term ids refer to the axiom system's full monomial table.

struct LinearConstraint {
    enum class Relation { Eq, Le };
    Relation relation = Relation::Eq;
    std::vector<std::pair<int, double>> terms;
    double rhs = 0.0;
    std::string tag;
};

struct EncodeOptions {
    int degree = 2;
    double c_corr = 10.0;
};

class AxiomSystem {
  public:
    Matrix points;
    int k = 1;
    int t = 0;
    double delta = 0.0;
    double eps = 0.0;
    Whitening whitening;
    int degree = 2;
    double delta_eff = 0.0;
    std::vector<LinearConstraint> constraints;

    int n() const { return static_cast<int>(points.rows()); }
    int dim() const { return static_cast<int>(points.cols()); }
    const MonomialTable& table() const { return table_; }

    void add_equality(const WPolynomial& poly, double rhs, std::string tag) {
        constraints.push_back(make_row(poly, rhs, LinearConstraint::Relation::Eq, std::move(tag)));
    }

    void add_inequality(const WPolynomial& poly, double rhs, std::string tag) {
        constraints.push_back(make_row(poly, rhs, LinearConstraint::Relation::Le, std::move(tag)));
    }

    double signed_residual(const PseudoExpectation& pe, const LinearConstraint& c) const {
        double value = 0.0;
        for (const auto& [id, coeff] : c.terms) value += coeff * pe.value(table_.set_of(id));
        return value - c.rhs;
    }

    // internal construction hooks (encode_axioms fills these)
    void init_table(int nn, int deg) { table_ = MonomialTable(nn, deg); }
    LinearConstraint make_row(const WPolynomial& poly, double rhs,
                              LinearConstraint::Relation rel, std::string tag) const {
        std::map<int, double> acc;
        for (const auto& term : poly.terms) {
            const int id = table_.reduce_id(term.vars);
            if (id < 0)
                throw DegreeTooHigh("AxiomSystem: constraint monomial exceeds the system degree");
            acc[id] += term.coeff;
        }
        LinearConstraint c;
        c.relation = rel;
        c.rhs = rhs;
        c.tag = std::move(tag);
        c.terms.assign(acc.begin(), acc.end());
        return c;
    }

  private:
    MonomialTable table_;
};

// ---------------------------------------------------------------------------
// encode_axioms

inline AxiomSystem encode_axioms(const Matrix& points, int k, int t, double delta, double eps,
                                 const Whitening& whitening, const EncodeOptions& opt = {}) {
    const int n = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());
    if (n <= 0 || k <= 0) throw PreconditionFailed("encode_axioms: need n >= 1 and k >= 1");
    if (n % k != 0) throw InvalidShape("encode_axioms: n must be divisible by k");
    if (t < 0) throw PreconditionFailed("encode_axioms: t must be >= 0");
    if (!(delta >= 0.0)) throw PreconditionFailed("encode_axioms: delta must be >= 0");
    if (!(eps >= 0.0 && eps < 1.0)) throw PreconditionFailed("encode_axioms: eps must lie in [0, 1)");
    if (opt.degree != 2 && opt.degree != 4)
        throw PreconditionFailed("encode_axioms: degree must be 2 or 4");
    if (opt.degree == 4 && n > 24)
        throw PreconditionFailed("encode_axioms: degree 4 mode is limited to n <= 24");
    if (whitening.W.rows() != d || whitening.W.cols() != d || whitening.center.size() != d)
        throw DimensionMismatch("encode_axioms: whitening shape does not match the data");
    if (!Eigen::FullPivLU<Matrix>(whitening.W).isInvertible())
        throw PreconditionFailed("encode_axioms: whitening matrix must be invertible");

    AxiomSystem ax;
    ax.points = points;
    ax.k = k;
    ax.t = t;
    ax.delta = delta;
    ax.eps = eps;
    ax.whitening = whitening;
    ax.degree = opt.degree;
    ax.delta_eff = delta + opt.c_corr * std::sqrt(eps);
    ax.init_table(n, opt.degree);
    const MonomialTable& table = ax.table();

    const double block = static_cast<double>(n) / k;
    const double kn = static_cast<double>(k) / n;

    {
        LinearConstraint c;
        c.relation = LinearConstraint::Relation::Eq;
        c.terms = {{0, 1.0}};
        c.rhs = 1.0;
        c.tag = "normalization";
        ax.constraints.push_back(std::move(c));
    }
    {
        LinearConstraint c;
        c.relation = LinearConstraint::Relation::Eq;
        for (int i = 0; i < n; ++i) c.terms.push_back({table.id_of({i}), 1.0});
        c.rhs = block;
        c.tag = "sum";
        ax.constraints.push_back(std::move(c));
    }
    // products of the block-size axiom with monomials the degree can read:
    // sum_i pE m_a w_i = (n/k) pE m_a.  Size-1 factors are the row sums any
    // degree supports; degree 4 adds sizes 2 and 3 so selection-mean algebra
    // cancels exactly under pE.
    const int max_factor = opt.degree == 2 ? 1 : 3;
    for (int size = 1; size <= max_factor; ++size) {
        const int lo = table.count_up_to(size - 1);
        const int hi = table.count_up_to(size);
        for (int id = lo; id < hi; ++id) {
            const std::vector<int> alpha = table.set_of(id);
            LinearConstraint c;
            c.relation = LinearConstraint::Relation::Eq;
            std::map<int, double> acc;
            acc[id] += static_cast<double>(alpha.size()) - block;
            for (int i = 0; i < n; ++i) {
                if (std::binary_search(alpha.begin(), alpha.end(), i)) continue;
                std::vector<int> ext = alpha;
                ext.push_back(i);
                std::sort(ext.begin(), ext.end());
                acc[table.id_of(ext)] += 1.0;
            }
            c.terms.assign(acc.begin(), acc.end());
            c.rhs = 0.0;
            if (size == 1) {
                c.tag = "row_sum_" + std::to_string(alpha[0]);
            } else {
                c.tag = "sum_x";
                for (int v : alpha) c.tag += "_" + std::to_string(v);
            }
            ax.constraints.push_back(std::move(c));
        }
    }

    if (t >= 1) {
        const Matrix Z = (points.rowwise() - whitening.center.transpose()) * whitening.W.transpose();
        Vector znorm(n);
        for (int i = 0; i < n; ++i) znorm(i) = Z.row(i).norm();

        const int s_lo = opt.degree == 4 ? (t >= 2 ? 2 : t + 1) : 1;
        for (int s = s_lo; s <= t; ++s) {
            const double s_fact = factorial(s);
            LinearConstraint c;
            c.relation = LinearConstraint::Relation::Le;
            c.tag = "moment_s" + std::to_string(s);

            if (opt.degree == 4 && s == 2) {
                // exact selection centering: the residual of the selection's
                // own covariance is a quartic polynomial the degree can read.
                const Matrix G = Z * Z.transpose();
                std::vector<double> coef(table.count(), 0.0);
                for (int i = 0; i < n; ++i) {
                    coef[table.id_of({i})] += -2.0 * kn * G(i, i);
                    for (int j = 0; j < n; ++j) {
                        const int pid = table.reduce_id({i, j});
                        coef[pid] += kn * kn * G(i, j) * G(i, j);
                        coef[pid] += 2.0 * kn * kn * G(i, j);
                        for (int l = 0; l < n; ++l) {
                            coef[table.reduce_id({i, j, l})] +=
                                -2.0 * kn * kn * kn * G(i, j) * G(i, l);
                            for (int m = 0; m < n; ++m)
                                coef[table.reduce_id({i, j, l, m})] +=
                                    kn * kn * kn * kn * G(i, j) * G(l, m);
                        }
                    }
                }
                for (int id = 0; id < table.count(); ++id)
                    if (coef[id] != 0.0) c.terms.push_back({id, coef[id] / s_fact});
                c.rhs = (ax.delta_eff - d) / s_fact;
            } else {
                const double a0 = gaussian_moment_tensor(s, d).frobenius_sq();
                std::map<int, double> acc;
                for (int i = 0; i < n; ++i) {
                    double single = kn * kn * std::pow(znorm(i) * znorm(i), s);
                    if (s % 2 == 0)
                        single += -2.0 * kn * double_factorial(s - 1) * std::pow(znorm(i), s);
                    acc[table.id_of({i})] += single;
                    for (int j = i + 1; j < n; ++j) {
                        const double g = Z.row(i).dot(Z.row(j));
                        acc[table.id_of({i, j})] += 2.0 * kn * kn * std::pow(g, s);
                    }
                }
                for (const auto& [id, v] : acc) c.terms.push_back({id, v / s_fact});
                c.rhs = (ax.delta_eff - a0) / s_fact;
            }
            ax.constraints.push_back(std::move(c));
        }
    }
    return ax;
}

// ---------------------------------------------------------------------------
// solve_feasible

struct SolveTolerances {
    double tol_psd = 1e-7;
    double tol_eq = 0.0;    // <= 0 means 1e-6 * n
    double tol_ineq = 0.0;  // <= 0 means 1e-6 * n
    double tol_gap = 1e-3;
    int max_iters = 50000;
    // first acceptance attempt happens here; the loop halves the threshold
    // whenever an iterate passes the stop test but fails the assembled
    // contract, so a loose start costs a few extra contract checks
    double stop_tol = 1e-4;
};

enum class Sense { Maximize, Minimize };

namespace detail {

struct SparseRow {
    std::vector<int> ids;
    std::vector<double> coef;
    double rhs = 0.0;
    int constraint_index = -1;
};

inline double row_dot_weighted(const SparseRow& a, const SparseRow& b,
                               const std::vector<double>& inv_nu) {
    double total = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.ids.size() && j < b.ids.size()) {
        if (a.ids[i] < b.ids[j])
            ++i;
        else if (a.ids[i] > b.ids[j])
            ++j;
        else {
            total += a.coef[i] * b.coef[j] * inv_nu[a.ids[i]];
            ++i;
            ++j;
        }
    }
    return total;
}

inline double row_apply(const SparseRow& r, const std::vector<double>& y) {
    double total = 0.0;
    for (std::size_t i = 0; i < r.ids.size(); ++i) total += r.coef[i] * y[r.ids[i]];
    return total;
}

struct SolverWorkspace {
    int n = 0, degree = 2, basis_count = 0, y_count = 0;
    MonomialTable table;
    std::vector<int> cell_group;  // basis_count^2, row-major
    std::vector<double> nu, inv_nu;
    std::vector<SparseRow> eq_rows, ineq_rows;
    Matrix gram_ei, gram_ii, gee_inv_gei;
    Eigen::LDLT<Matrix> gram_ee_ldlt;
    std::map<std::uint64_t, Eigen::LDLT<Matrix>> schur_cache;

    void build(const AxiomSystem& ax) {
        n = ax.n();
        degree = ax.degree;
        table = ax.table();
        y_count = table.count();
        const MonomialTable btable(n, degree / 2);
        basis_count = btable.count();

        std::vector<std::vector<int>> basis_sets(basis_count);
        for (int b = 0; b < basis_count; ++b) basis_sets[b] = btable.set_of(b);
        cell_group.assign(static_cast<std::size_t>(basis_count) * basis_count, 0);
        nu.assign(y_count, 0.0);
        std::vector<int> merged;
        for (int a = 0; a < basis_count; ++a) {
            for (int b = 0; b < basis_count; ++b) {
                merged.clear();
                std::set_union(basis_sets[a].begin(), basis_sets[a].end(), basis_sets[b].begin(),
                               basis_sets[b].end(), std::back_inserter(merged));
                const int id = table.id_of(merged);
                cell_group[static_cast<std::size_t>(a) * basis_count + b] = id;
                nu[id] += 1.0;
            }
        }
        inv_nu.resize(y_count);
        for (int m = 0; m < y_count; ++m) inv_nu[m] = 1.0 / nu[m];

        for (int ci = 0; ci < static_cast<int>(ax.constraints.size()); ++ci) {
            const auto& c = ax.constraints[ci];
            SparseRow row;
            row.rhs = c.rhs;
            row.constraint_index = ci;
            row.ids.reserve(c.terms.size());
            row.coef.reserve(c.terms.size());
            for (const auto& [id, v] : c.terms) {
                row.ids.push_back(id);
                row.coef.push_back(v);
            }
            if (c.relation == LinearConstraint::Relation::Eq)
                eq_rows.push_back(std::move(row));
            else
                ineq_rows.push_back(std::move(row));
        }
        if (ineq_rows.size() > 62)
            throw PreconditionFailed("solve_feasible: more than 62 inequality rows");

        const int ne = static_cast<int>(eq_rows.size());
        const int ni = static_cast<int>(ineq_rows.size());
        Matrix gram_ee(ne, ne);
        for (int a = 0; a < ne; ++a)
            for (int b = a; b < ne; ++b)
                gram_ee(a, b) = gram_ee(b, a) = row_dot_weighted(eq_rows[a], eq_rows[b], inv_nu);
        const double tik = 1e-12 * std::max(1.0, gram_ee.trace() / ne);
        gram_ee.diagonal().array() += tik;
        gram_ee_ldlt.compute(gram_ee);

        gram_ei.resize(ne, ni);
        gram_ii.resize(ni, ni);
        for (int a = 0; a < ne; ++a)
            for (int b = 0; b < ni; ++b)
                gram_ei(a, b) = row_dot_weighted(eq_rows[a], ineq_rows[b], inv_nu);
        for (int a = 0; a < ni; ++a)
            for (int b = a; b < ni; ++b)
                gram_ii(a, b) = gram_ii(b, a) = row_dot_weighted(ineq_rows[a], ineq_rows[b], inv_nu);
        gee_inv_gei = ni > 0 ? gram_ee_ldlt.solve(gram_ei) : Matrix(ne, 0);
    }

    // weighted least-squares consistency probe of the equality rows; throws
    // when no y satisfies them, naming the worst row.
    void check_equality_consistency(const AxiomSystem& ax) const {
        const int ne = static_cast<int>(eq_rows.size());
        Vector b(ne);
        for (int r = 0; r < ne; ++r) b(r) = eq_rows[r].rhs;
        const Vector lambda = gram_ee_ldlt.solve(b);
        std::vector<double> y(y_count, 0.0);
        for (int r = 0; r < ne; ++r)
            for (std::size_t i = 0; i < eq_rows[r].ids.size(); ++i)
                y[eq_rows[r].ids[i]] += eq_rows[r].coef[i] * lambda(r) * inv_nu[eq_rows[r].ids[i]];
        double worst = 0.0;
        int worst_row = -1;
        for (int r = 0; r < ne; ++r) {
            const double viol =
                std::abs(row_apply(eq_rows[r], y) - eq_rows[r].rhs) / std::max(1.0, std::abs(eq_rows[r].rhs));
            if (viol > worst) {
                worst = viol;
                worst_row = r;
            }
        }
        if (worst > 1e-6) {
            char msg[256];
            std::snprintf(msg, sizeof msg,
                          "solve_feasible: equality rows are mutually inconsistent, row '%s' off by %.6g",
                          ax.constraints[eq_rows[worst_row].constraint_index].tag.c_str(), worst);
            throw Infeasible(msg);
        }
    }

    void fill_matrix(const std::vector<double>& y, Matrix& out) const {
        out.resize(basis_count, basis_count);
        const std::size_t total = cell_group.size();
        double* dst = out.data();
        for (std::size_t c = 0; c < total; ++c) dst[c] = y[cell_group[c]];
    }

    void group_average(const Matrix& b, std::vector<double>& ybar) const {
        ybar.assign(y_count, 0.0);
        const double* src = b.data();
        for (std::size_t c = 0; c < cell_group.size(); ++c) ybar[cell_group[c]] += src[c];
        for (int m = 0; m < y_count; ++m) ybar[m] *= inv_nu[m];
    }

    // projection of ytil onto {Ay = b, Gy <= h} in the nu-weighted norm via an
    // active-set loop over the (few) inequality rows; Schur complements of the
    // cached equality factorization handle each active set.
    void project(std::vector<double>& y, const std::vector<double>& ytil, std::uint64_t& mask) {
        const int ne = static_cast<int>(eq_rows.size());
        const int ni = static_cast<int>(ineq_rows.size());
        Vector r0(ne);
        for (int r = 0; r < ne; ++r) r0(r) = row_apply(eq_rows[r], ytil) - eq_rows[r].rhs;
        const Vector q0 = gram_ee_ldlt.solve(r0);

        for (int pass = 0; pass < 200; ++pass) {
            std::vector<int> act;
            for (int j = 0; j < ni; ++j)
                if (mask & (1ull << j)) act.push_back(j);
            const int na = static_cast<int>(act.size());

            Vector mu(na);
            if (na > 0) {
                auto it = schur_cache.find(mask);
                if (it == schur_cache.end()) {
                    Matrix schur(na, na);
                    for (int a = 0; a < na; ++a)
                        for (int b = 0; b < na; ++b)
                            schur(a, b) = gram_ii(act[a], act[b]) -
                                          gram_ei.col(act[a]).dot(gee_inv_gei.col(act[b]));
                    schur.diagonal().array() += 1e-13 * std::max(1.0, schur.trace() / na);
                    it = schur_cache.emplace(mask, Eigen::LDLT<Matrix>(schur)).first;
                }
                Vector r1(na);
                for (int a = 0; a < na; ++a)
                    r1(a) = row_apply(ineq_rows[act[a]], ytil) - ineq_rows[act[a]].rhs -
                            gram_ei.col(act[a]).dot(q0);
                mu = it->second.solve(r1);
            }
            Vector lambda = q0;
            for (int a = 0; a < na; ++a) lambda -= gee_inv_gei.col(act[a]) * mu(a);

            y = ytil;
            for (int r = 0; r < ne; ++r)
                for (std::size_t i = 0; i < eq_rows[r].ids.size(); ++i)
                    y[eq_rows[r].ids[i]] -= eq_rows[r].coef[i] * lambda(r) * inv_nu[eq_rows[r].ids[i]];
            for (int a = 0; a < na; ++a)
                for (std::size_t i = 0; i < ineq_rows[act[a]].ids.size(); ++i)
                    y[ineq_rows[act[a]].ids[i]] -=
                        ineq_rows[act[a]].coef[i] * mu(a) * inv_nu[ineq_rows[act[a]].ids[i]];

            // drop the most negative multiplier, else add the worst violation
            int drop = -1;
            double most_negative = -1e-11;
            for (int a = 0; a < na; ++a) {
                if (mu(a) < most_negative) {
                    most_negative = mu(a);
                    drop = act[a];
                }
            }
            if (drop >= 0) {
                mask &= ~(1ull << drop);
                continue;
            }
            int add = -1;
            double worst = 1e-11;
            for (int j = 0; j < ni; ++j) {
                if (mask & (1ull << j)) continue;
                const double viol = (row_apply(ineq_rows[j], y) - ineq_rows[j].rhs) /
                                    std::max(1.0, std::abs(ineq_rows[j].rhs));
                if (viol > worst) {
                    worst = viol;
                    add = j;
                }
            }
            if (add < 0) return;
            mask |= 1ull << add;
        }
    }
};

}  // namespace detail

struct SolveState {
    std::shared_ptr<detail::SolverWorkspace> ws;
    std::vector<double> y;
    Matrix S, U;
    double rho = 1.0;
    std::uint64_t active_mask = 0;
    bool warm = false;
};

namespace detail {

inline Matrix project_psd(const Matrix& a) {
    const Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    const Vector lam = eig.eigenvalues().cwiseMax(0.0);
    return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

inline PseudoExpectation assemble_pe(const AxiomSystem& ax, const SolverWorkspace& ws,
                                     const Matrix& s_iter, const std::vector<double>& y,
                                     const WPolynomial& objective) {
    Matrix p = 0.5 * (s_iter + s_iter.transpose());
    if (!(p(0, 0) > 0.5)) {
        Matrix my;
        ws.fill_matrix(y, my);
        p = project_psd(my);
    }
    if (p(0, 0) > 0.0) p /= p(0, 0);

    PseudoExpectation pe;
    pe.degree = ax.degree;
    pe.n = ax.n();
    pe.k = ax.k;
    pe.basis_table = MonomialTable(ax.n(), ax.degree / 2);
    pe.moment_matrix = std::move(p);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(pe.moment_matrix, Eigen::EigenvaluesOnly);
    pe.residuals["psd_min_eigenvalue"] = eig.eigenvalues().minCoeff();
    pe.residuals["normalization"] = std::abs(pe.moment_matrix(0, 0) - 1.0);
    double boole = 0.0;
    for (int i = 0; i < pe.n; ++i)
        boole = std::max(boole,
                         std::abs(pe.moment_matrix(1 + i, 1 + i) - pe.moment_matrix(0, 1 + i)));
    pe.residuals["booleanity"] = boole;

    for (const auto& c : ax.constraints) {
        const double r = ax.signed_residual(pe, c);
        // residuals are recorded relative to the row's coefficient norm; an
        // absolute reading would demand wildly different iterate accuracy
        // between rows whose coefficients span many orders of magnitude.
        // with the l2 norm the scaled violation is bounded by the entrywise
        // error of the moment matrix, so one iterate accuracy serves all rows
        double norm_sq = 0.0;
        for (const auto& [id, coeff] : c.terms) norm_sq += coeff * coeff;
        const double scale = std::max({1.0, std::abs(c.rhs), std::sqrt(norm_sq)});
        const double v =
            (c.relation == LinearConstraint::Relation::Eq ? std::abs(r) : std::max(0.0, r)) / scale;
        std::string key = c.tag;
        if (key.rfind("row_sum_", 0) == 0) key = "row_sum";
        if (key.rfind("sum_x_", 0) == 0) key = "sum_x";
        auto [it, inserted] = pe.residuals.try_emplace(key, v);
        if (!inserted) it->second = std::max(it->second, v);
    }
    pe.objective_value = pe_eval(pe, objective);
    return pe;
}

inline bool contract_met(const AxiomSystem& ax, const PseudoExpectation& pe,
                         const SolveTolerances& tol) {
    const double tol_eq = tol.tol_eq > 0.0 ? tol.tol_eq : 1e-6 * ax.n();
    const double tol_ineq = tol.tol_ineq > 0.0 ? tol.tol_ineq : 1e-6 * ax.n();
    if (pe.residuals.at("psd_min_eigenvalue") < -tol.tol_psd) return false;
    if (pe.residuals.at("normalization") > 1e-9) return false;
    if (pe.residuals.at("booleanity") > tol_eq) return false;
    for (const auto& c : ax.constraints) {
        std::string key = c.tag;
        if (key.rfind("row_sum_", 0) == 0) key = "row_sum";
        if (key.rfind("sum_x_", 0) == 0) key = "sum_x";
        const double limit = c.relation == LinearConstraint::Relation::Eq ? tol_eq : tol_ineq;
        if (pe.residuals.at(key) > limit) return false;
    }
    return true;
}

}  // namespace detail

inline PseudoExpectation solve_feasible(const AxiomSystem& ax, const WPolynomial& objective,
                                        Sense sense, const SolveTolerances& tol = {},
                                        SolveState* state = nullptr) {
    if (ax.constraints.empty()) throw PreconditionFailed("solve_feasible: empty axiom system");
    if (objective.degree() > 2)
        throw PreconditionFailed("solve_feasible: objective degree must be <= 2");
    for (const auto& term : objective.terms)
        if (!std::isfinite(term.coeff))
            throw PreconditionFailed("solve_feasible: objective coefficients must be finite");

    SolveState local;
    SolveState& st = state ? *state : local;
    if (!st.ws) {
        st.ws = std::make_shared<detail::SolverWorkspace>();
        st.ws->build(ax);
        st.ws->check_equality_consistency(ax);
        st.warm = false;
    }
    detail::SolverWorkspace& ws = *st.ws;

    // internal convention: minimize cvec . y
    std::vector<double> cvec(ws.y_count, 0.0);
    std::vector<std::pair<int, double>> obj_terms;
    {
        const double sign = sense == Sense::Minimize ? 1.0 : -1.0;
        for (const auto& term : objective.terms) {
            const int id = ws.table.reduce_id(term.vars);
            if (id < 0) throw DegreeTooHigh("solve_feasible: objective monomial out of range");
            cvec[id] += sign * term.coeff;
            obj_terms.push_back({id, term.coeff});
        }
        // a linear objective can be rescaled without moving its argmin; keep
        // the step size O(1) so huge coefficients do not swamp the iteration
        // (objective_value is still reported in the caller's units)
        double cmax = 0.0;
        for (double c : cvec) cmax = std::max(cmax, std::abs(c));
        if (cmax > 1.0)
            for (double& c : cvec) c /= cmax;
    }

    if (!st.warm) {
        // start from the exchangeable selection of a uniformly random block:
        // pE of every monomial is a falling-factorial product, which satisfies
        // all structural equalities and is a genuine distribution (PSD).
        st.y.assign(ws.y_count, 0.0);
        const double m_block = static_cast<double>(ax.n()) / ax.k;
        for (int id = 0; id < ws.y_count; ++id) {
            const int size = static_cast<int>(ws.table.set_of(id).size());
            double v = 1.0;
            for (int r = 0; r < size; ++r) v *= (m_block - r) / (ax.n() - r);
            st.y[id] = v;
        }
        ws.fill_matrix(st.y, st.S);
        st.U = Matrix::Zero(ws.basis_count, ws.basis_count);
        st.rho = 1.0;
        st.active_mask = 0;
    }

    const double alpha = 1.6;
    double cur_stop = tol.stop_tol;
    double r_rel = 1.0, d_rel = 1.0;
    double best_r = 1e300;
    std::vector<double> best_y = st.y;
    Matrix best_s = st.S;
    double checkpoint_obj = 0.0;
    bool have_checkpoint = false;
    double window_r = 1e300, window_u = 0.0;

    Matrix my, mhat, s_new;
    std::vector<double> ybar, ytil(ws.y_count);
    int iter = 0;
    while (iter < tol.max_iters) {
        ++iter;

        const Matrix b = st.S - st.U;
        ws.group_average(b, ybar);
        for (int m = 0; m < ws.y_count; ++m)
            ytil[m] = ybar[m] - cvec[m] * ws.inv_nu[m] / st.rho;
        ws.project(st.y, ytil, st.active_mask);

        ws.fill_matrix(st.y, my);
        mhat = alpha * my + (1.0 - alpha) * st.S;
        s_new = detail::project_psd(mhat + st.U);
        st.U += mhat - s_new;

        const double r_abs = (my - s_new).norm();
        const double scale_pri = std::max({1.0, my.norm(), s_new.norm()});
        r_rel = r_abs / scale_pri;
        const double d_abs = st.rho * (s_new - st.S).norm();
        d_rel = d_abs / std::max(1.0, st.rho * st.U.norm());
        st.S = s_new;

        if (r_rel < best_r) {
            best_r = r_rel;
            best_y = st.y;
            best_s = st.S;
        }

        if (iter % 50 == 0 && iter < tol.max_iters) {
            if (r_rel > 10.0 * d_rel && st.rho < 1e6) {
                st.rho *= 2.0;
                st.U *= 0.5;
            } else if (d_rel > 10.0 * r_rel && st.rho > 1e-6) {
                st.rho *= 0.5;
                st.U *= 2.0;
            }
        }

#ifdef ROBUSTMIX_SOLVE_TRACE
        if (iter % 1000 == 0)
            std::fprintf(stderr, "  it %6d r %.3e d %.3e rho %.3e mask %llx\n", iter, r_rel, d_rel,
                         st.rho, static_cast<unsigned long long>(st.active_mask));
#endif

        if (iter % 25 == 0) {
            // objective tracked in user units for the gap drift test
            double cur_obj = 0.0;
            for (const auto& [id, coeff] : obj_terms) cur_obj += coeff * st.y[id];
            if (r_rel <= cur_stop && d_rel <= cur_stop &&
                (!have_checkpoint ||
                 std::abs(cur_obj - checkpoint_obj) <= 0.5 * tol.tol_gap * std::max(1.0, std::abs(cur_obj)))) {
                PseudoExpectation pe = detail::assemble_pe(ax, ws, st.S, st.y, objective);
                if (detail::contract_met(ax, pe, tol)) {
                    pe.iterations = iter;
                    pe.residuals["primal_residual"] = r_rel;
                    st.warm = true;
                    return pe;
                }
                cur_stop = std::max(cur_stop / 2.0, 1e-13);
            }
            checkpoint_obj = cur_obj;
            have_checkpoint = true;
        }

        if (iter % 2000 == 0) {
            const double u_norm = st.U.norm();
            if (iter >= 6000 && r_rel > std::max(1e-3, 50.0 * cur_stop) && r_rel > 0.97 * window_r &&
                u_norm > 1.05 * window_u) {
                PseudoExpectation pe = detail::assemble_pe(ax, ws, best_s, best_y, objective);
                double worst = 0.0;
                std::string worst_tag = "psd";
                for (const auto& c : ax.constraints) {
                    const double r = ax.signed_residual(pe, c);
                    const double v =
                        c.relation == LinearConstraint::Relation::Eq ? std::abs(r) : std::max(0.0, r);
                    if (v > worst) {
                        worst = v;
                        worst_tag = c.tag;
                    }
                }
                char msg[256];
                std::snprintf(msg, sizeof msg,
                              "solve_feasible: primal residual stalled at %.3g with growing dual, "
                              "max violation '%s' = %.6g",
                              r_rel, worst_tag.c_str(), worst);
                throw Infeasible(msg);
            }
            window_r = r_rel;
            window_u = u_norm;
        }
    }

    PseudoExpectation pe = detail::assemble_pe(ax, ws, best_s, best_y, objective);
    if (best_r > std::max(1e-3, 50.0 * tol.stop_tol)) {
        // never got anywhere near the constraint set: infeasible, not a stall
        double worst = 0.0;
        std::string worst_tag = "psd";
        for (const auto& c : ax.constraints) {
            const double r = ax.signed_residual(pe, c);
            const double v =
                c.relation == LinearConstraint::Relation::Eq ? std::abs(r) : std::max(0.0, r);
            if (v > worst) {
                worst = v;
                worst_tag = c.tag;
            }
        }
        char msg[256];
        std::snprintf(msg, sizeof msg,
                      "solve_feasible: no iterate approached feasibility, max violation '%s' = %.6g",
                      worst_tag.c_str(), worst);
        throw Infeasible(msg);
    }
    pe.stalled = true;
    pe.iterations = iter;
    pe.residuals["primal_residual"] = best_r;
    st.warm = true;
    return pe;
}

// ---------------------------------------------------------------------------
// update_whitening: refresh the whitening frame from the selection a
// pseudoexpectation describes.  The center is the selection-weighted mean;
// the covariance read keeps that center fixed so only first-order values of
// pE are consumed.

inline Whitening update_whitening(const Matrix& points, const PseudoExpectation& pe) {
    const int n = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());
    if (pe.n != n) throw DimensionMismatch("update_whitening: pe was built for a different n");
    const double kn = static_cast<double>(pe.k) / n;

    Vector weights(n);
    for (int i = 0; i < n; ++i) weights(i) = pe.value({i});
    Vector mu = Vector::Zero(d);
    for (int i = 0; i < n; ++i) mu += kn * weights(i) * points.row(i).transpose();
    Matrix sigma = Matrix::Zero(d, d);
    for (int i = 0; i < n; ++i) {
        const Vector c = points.row(i).transpose() - mu;
        sigma += kn * weights(i) * c * c.transpose();
    }
    sigma = 0.5 * (sigma + sigma.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    const Vector lam = eig.eigenvalues();
    if (!lam.allFinite() || lam.maxCoeff() <= 1e-12)
        throw DegenerateSelection("update_whitening: selection covariance is numerically singular");
    const double floor = std::max(1e-10 * lam.maxCoeff(), 1e-300);
    Vector inv_sqrt(d);
    for (int i = 0; i < d; ++i) inv_sqrt(i) = 1.0 / std::sqrt(std::max(lam(i), floor));
    Whitening out;
    out.W = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
    out.center = mu;
    return out;
}

// ---------------------------------------------------------------------------
// brute_force_indicator_optimum: exhaustive oracle over balanced indicators,
// used to sandwich the relaxation on small instances.

struct BruteForceResult {
    double best_value = 0.0;
    std::vector<int> best_indicator;
    int feasible_count = 0;
};

inline BruteForceResult brute_force_indicator_optimum(const AxiomSystem& ax,
                                                      const WPolynomial& objective, Sense sense,
                                                      double feas_slack = 1e-9) {
    const int n = ax.n();
    const int m = n / ax.k;
    if (binomial_u64(n, m) > 2000000ull)
        throw PreconditionFailed("brute_force_indicator_optimum: instance too large to enumerate");

    const MonomialTable& table = ax.table();
    BruteForceResult out;
    out.best_value = sense == Sense::Maximize ? -1e300 : 1e300;

    std::vector<int> comb(m);
    for (int i = 0; i < m; ++i) comb[i] = i;
    std::vector<int> u(n, 0);
    std::vector<double> yvec(table.count(), 0.0);
    while (true) {
        std::fill(u.begin(), u.end(), 0);
        for (int i : comb) u[i] = 1;
        for (int id = 0; id < table.count(); ++id) {
            double prod = 1.0;
            for (int v : table.set_of(id)) prod *= u[v];
            yvec[id] = prod;
        }
        bool feasible = true;
        for (const auto& c : ax.constraints) {
            double value = 0.0;
            for (const auto& [id, coeff] : c.terms) value += coeff * yvec[id];
            const double slack = feas_slack * std::max(1.0, std::abs(c.rhs));
            if (c.relation == LinearConstraint::Relation::Eq) {
                if (std::abs(value - c.rhs) > slack) feasible = false;
            } else if (value > c.rhs + slack) {
                feasible = false;
            }
            if (!feasible) break;
        }
        if (feasible) {
            ++out.feasible_count;
            double obj = 0.0;
            for (const auto& term : objective.terms) {
                double prod = term.coeff;
                for (int v : term.vars) prod *= u[v];
                obj += prod;
            }
            const bool better =
                sense == Sense::Maximize ? obj > out.best_value : obj < out.best_value;
            if (better) {
                out.best_value = obj;
                out.best_indicator = u;
            }
        }
        // next combination in lexicographic order
        int pos = m - 1;
        while (pos >= 0 && comb[pos] == n - m + pos) --pos;
        if (pos < 0) break;
        ++comb[pos];
        for (int q = pos + 1; q < m; ++q) comb[q] = comb[q - 1] + 1;
    }
    return out;
}

}  // namespace robustmix
