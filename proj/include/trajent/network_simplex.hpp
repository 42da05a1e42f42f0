#pragma once

// Exact discrete optimal transport by the primal network simplex method on
// the bipartite transportation graph. Supplies are scaled to 64-bit integers
// so the pivoting is exact; costs stay in double precision.
//
// The spanning tree is rooted at an artificial node joined to every support
// point. Pivots use block-search pricing and the strongly-feasible leaving
// arc rule, which rules out cycling under degeneracy.

#include "trajent/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace trajent {

struct TransportFlow {
    std::size_t source = 0;
    std::size_t target = 0;
    double mass = 0.0;
};

struct DiscreteTransport {
    double cost = 0.0;                ///< optimal sum of mass * cost
    std::vector<TransportFlow> plan;  ///< nonzero flows only
    std::size_t pivots = 0;
};

namespace detail {

class NetworkSimplex {
public:
    // supply[v] > 0 for sources, < 0 for sinks; arcs run from every source
    // to every sink with cost(i, j).
    template <class CostFn>
    NetworkSimplex(std::vector<std::int64_t> const &supply, std::size_t n_src, CostFn &&cost)
        : n_src_(n_src), n_dst_(supply.size() - n_src), n_nodes_(supply.size() + 1), root_(supply.size())
    {
        std::size_t const n_real = n_src_ * n_dst_;
        n_arcs_ = n_real + supply.size();
        src_.resize(n_arcs_);
        dst_.resize(n_arcs_);
        cost_.resize(n_arcs_);
        flow_.assign(n_arcs_, 0);
        double max_cost = 0.0;
        for (std::size_t i = 0; i < n_src_; ++i)
            for (std::size_t j = 0; j < n_dst_; ++j) {
                std::size_t const a = i * n_dst_ + j;
                src_[a] = i;
                dst_[a] = n_src_ + j;
                cost_[a] = cost(i, j);
                if (!std::isfinite(cost_[a]) || cost_[a] < 0.0) throw InputError("costs must be finite and nonnegative");
                max_cost = std::max(max_cost, cost_[a]);
            }
        double const art = (max_cost + 1.0) * static_cast<double>(n_nodes_);
        tol_ = 1e-12 * art;

        parent_.assign(n_nodes_, root_);
        parent_arc_.assign(n_nodes_, 0);
        for (std::size_t v = 0; v < supply.size(); ++v) {
            std::size_t const a = n_real + v;
            if (supply[v] >= 0) {
                src_[a] = v;
                dst_[a] = root_;
                flow_[a] = supply[v];
            } else {
                src_[a] = root_;
                dst_[a] = v;
                flow_[a] = -supply[v];
            }
            cost_[a] = art;
            parent_arc_[v] = a;
        }
        in_tree_.assign(n_arcs_, 0);
        tree_pos_.assign(n_arcs_, 0);
        for (std::size_t v = 0; v < supply.size(); ++v) {
            in_tree_[n_real + v] = 1;
            tree_pos_[n_real + v] = tree_arcs_.size();
            tree_arcs_.push_back(n_real + v);
        }
        rebuild();
    }

    std::size_t run()
    {
        std::size_t const n_real = n_src_ * n_dst_;
        std::size_t const block = std::max<std::size_t>(10, static_cast<std::size_t>(std::sqrt(double(n_real))));
        std::size_t next = 0, pivots = 0;
        for (;;) {
            // block search: scan one block at a time, take the best arc of the
            // first block that has a violating arc
            std::size_t entering = n_arcs_;
            double best = -tol_;
            std::size_t scanned = 0, in_block = 0;
            for (std::size_t a = next; scanned < n_real; ++scanned) {
                if (!in_tree_[a]) {
                    double const rc = cost_[a] + pi_[src_[a]] - pi_[dst_[a]];
                    if (rc < best) {
                        best = rc;
                        entering = a;
                    }
                }
                if (++a == n_real) a = 0;
                if (++in_block == block) {
                    in_block = 0;
                    if (entering != n_arcs_) {
                        next = a;
                        break;
                    }
                }
            }
            if (entering == n_arcs_) break;
            pivot(entering);
            ++pivots;
        }
        for (std::size_t a = n_real; a < n_arcs_; ++a)
            if (flow_[a] != 0) throw InputError("transport problem infeasible: marginals do not balance");
        return pivots;
    }

    std::int64_t flow(std::size_t i, std::size_t j) const { return flow_[i * n_dst_ + j]; }
    double cost(std::size_t i, std::size_t j) const { return cost_[i * n_dst_ + j]; }

private:
    // Arc from v to its parent ("up") or from the parent to v ("down").
    bool up(std::size_t v) const { return src_[parent_arc_[v]] == v; }

    void pivot(std::size_t entering)
    {
        std::size_t const u = src_[entering], v = dst_[entering];
        // join node: walk the deeper endpoint up
        std::size_t a = u, b = v;
        while (a != b) {
            if (depth_[a] >= depth_[b]) a = parent_[a];
            else b = parent_[b];
        }
        std::size_t const join = a;

        // Orientation pushes flow along u -> v. On the u side the cycle runs
        // from the join down to u, on the v side from v up to the join.
        constexpr std::int64_t inf = std::numeric_limits<std::int64_t>::max();
        std::int64_t delta = inf;
        std::size_t leaving_node = root_;
        for (std::size_t w = u; w != join; w = parent_[w]) {
            std::int64_t const c = up(w) ? flow_[parent_arc_[w]] : inf;
            if (c < delta) {
                delta = c;
                leaving_node = w;
            }
        }
        for (std::size_t w = v; w != join; w = parent_[w]) {
            std::int64_t const c = up(w) ? inf : flow_[parent_arc_[w]];
            if (c <= delta) {
                delta = c;
                leaving_node = w;
            }
        }
        if (delta == inf) throw std::logic_error("unbounded transport problem");

        if (delta > 0) {
            flow_[entering] += delta;
            for (std::size_t w = u; w != join; w = parent_[w])
                flow_[parent_arc_[w]] += up(w) ? -delta : delta;
            for (std::size_t w = v; w != join; w = parent_[w])
                flow_[parent_arc_[w]] += up(w) ? delta : -delta;
        }
        std::size_t const leaving = parent_arc_[leaving_node];
        in_tree_[leaving] = 0;
        in_tree_[entering] = 1;
        tree_pos_[entering] = tree_pos_[leaving];
        tree_arcs_[tree_pos_[entering]] = entering;
        rebuild();
    }

    // Recompute parent, depth and potentials from the set of tree arcs.
    void rebuild()
    {
        adj_start_.assign(n_nodes_ + 1, 0);
        for (std::size_t a : tree_arcs_) {
            ++adj_start_[src_[a] + 1];
            ++adj_start_[dst_[a] + 1];
        }
        std::partial_sum(adj_start_.begin(), adj_start_.end(), adj_start_.begin());
        adj_.resize(2 * tree_arcs_.size());
        std::vector<std::size_t> fill(adj_start_.begin(), adj_start_.end() - 1);
        for (std::size_t a : tree_arcs_) {
            adj_[fill[src_[a]]++] = a;
            adj_[fill[dst_[a]]++] = a;
        }
        pi_.assign(n_nodes_, 0.0);
        depth_.assign(n_nodes_, 0);
        std::vector<char> seen(n_nodes_, 0);
        std::vector<std::size_t> stack{root_};
        seen[root_] = 1;
        parent_[root_] = root_;
        std::size_t visited = 1;
        while (!stack.empty()) {
            std::size_t const x = stack.back();
            stack.pop_back();
            for (std::size_t k = adj_start_[x]; k < adj_start_[x + 1]; ++k) {
                std::size_t const arc = adj_[k];
                std::size_t const y = src_[arc] == x ? dst_[arc] : src_[arc];
                if (seen[y]) continue;
                seen[y] = 1;
                ++visited;
                parent_[y] = x;
                parent_arc_[y] = arc;
                depth_[y] = depth_[x] + 1;
                // zero reduced cost on tree arcs: c + pi_src - pi_dst = 0
                pi_[y] = src_[arc] == x ? pi_[x] + cost_[arc] : pi_[x] - cost_[arc];
                stack.push_back(y);
            }
        }
        if (visited != n_nodes_) throw std::logic_error("network simplex tree lost connectivity");
    }

    std::size_t n_src_, n_dst_, n_nodes_, root_, n_arcs_ = 0;
    double tol_ = 0.0;
    std::vector<std::size_t> src_, dst_;
    std::vector<double> cost_;
    std::vector<std::int64_t> flow_;
    std::vector<char> in_tree_;
    std::vector<std::size_t> parent_, parent_arc_, depth_;
    std::vector<double> pi_;
    std::vector<std::size_t> adj_start_, adj_, tree_arcs_, tree_pos_;
};

inline void check_weights(std::vector<double> const &w, char const *name)
{
    if (w.empty()) throw InputError(std::string(name) + " has no support points");
    for (double x : w)
        if (!std::isfinite(x) || x < 0.0) throw InputError(std::string(name) + " has a negative or non-finite weight");
    double const s = pairwise_sum(w);
    if (std::abs(s - 1.0) > 1e-9) throw InputError(std::string(name) + " weights do not sum to 1");
}

} // namespace detail

/// Exact optimal transport between discrete marginals. `cost` is row-major
/// with mu.size() rows and nu.size() columns.
inline DiscreteTransport solve_discrete_transport(std::vector<double> const &mu, std::vector<double> const &nu,
                                                  std::vector<double> const &cost)
{
    detail::check_weights(mu, "mu");
    detail::check_weights(nu, "nu");
    if (cost.size() != mu.size() * nu.size()) throw InputError("cost matrix shape does not match the marginals");

    // drop empty support points, then scale to integers with equal totals
    std::vector<std::size_t> rows, cols;
    for (std::size_t i = 0; i < mu.size(); ++i)
        if (mu[i] > 0.0) rows.push_back(i);
    for (std::size_t j = 0; j < nu.size(); ++j)
        if (nu[j] > 0.0) cols.push_back(j);
    double const scale = 0x1.0p50;
    std::vector<std::int64_t> supply;
    supply.reserve(rows.size() + cols.size());
    std::int64_t total_src = 0, total_dst = 0;
    for (std::size_t i : rows) {
        supply.push_back(std::max<std::int64_t>(1, std::llround(mu[i] * scale)));
        total_src += supply.back();
    }
    for (std::size_t j : cols) {
        supply.push_back(-std::max<std::int64_t>(1, std::llround(nu[j] * scale)));
        total_dst -= supply.back();
    }
    // absorb rounding into the largest sink
    auto largest = std::min_element(supply.begin() + static_cast<std::ptrdiff_t>(rows.size()), supply.end());
    *largest -= total_src - total_dst;
    if (*largest >= 0) throw InputError("degenerate weights: cannot balance the marginals");

    std::size_t const nc = nu.size();
    detail::NetworkSimplex ns(supply, rows.size(),
                              [&](std::size_t i, std::size_t j) { return cost[rows[i] * nc + cols[j]]; });
    DiscreteTransport out;
    out.pivots = ns.run();
    std::vector<double> terms;
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            std::int64_t const f = ns.flow(i, j);
            if (f == 0) continue;
            double const m = static_cast<double>(f) / scale;
            out.plan.push_back({rows[i], cols[j], m});
            terms.push_back(m * ns.cost(i, j));
        }
    out.cost = pairwise_sum(terms);
    return out;
}

/// W2 between discrete marginals given squared-distance costs.
inline double w2_discrete(std::vector<double> const &mu, std::vector<double> const &nu,
                          std::vector<double> const &cost)
{
    return std::sqrt(std::max(0.0, solve_discrete_transport(mu, nu, cost).cost));
}

/// Squared Euclidean distances between two point sets, row-major.
template <int Dim>
std::vector<double> squared_distance_costs(std::vector<Point<Dim>> const &xs, std::vector<Point<Dim>> const &ys)
{
    std::vector<double> c(xs.size() * ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < ys.size(); ++j) {
            double s = 0.0;
            for (int a = 0; a < Dim; ++a) s += (xs[i][a] - ys[j][a]) * (xs[i][a] - ys[j][a]);
            c[i * ys.size() + j] = s;
        }
    return c;
}

} // namespace trajent
