#include "dfmtl/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace dfmtl {

AnchorGradient analytic_anchor_gradient() {
  return [](const VecR& anchor, const MatR& keys, const PoolIndex& pools, Temperature<Real> tau) {
    return multi_instance_info_nce<Real>(anchor, keys, pools, tau).grad;
  };
}

VecR finite_difference_gradient(const VecR& anchor, const MatR& keys, const PoolIndex& pools,
                                Temperature<Real> tau, Real h) {
  VecR g(anchor.size());
  VecR probe = anchor;
  for (Eigen::Index d = 0; d < anchor.size(); ++d) {
    probe[d] = anchor[d] + h;
    const Real up = multi_instance_info_nce<Real>(probe, keys, pools, tau).loss;
    probe[d] = anchor[d] - h;
    const Real down = multi_instance_info_nce<Real>(probe, keys, pools, tau).loss;
    probe[d] = anchor[d];
    g[d] = (up - down) / (2 * h);
  }
  return g;
}

Real relative_error(const VecR& a, const VecR& b) {
  const Real scale = std::max({a.norm(), b.norm(), Real(1e-12)});
  return (a - b).norm() / scale;
}

std::vector<CheckResult> analytic_loss_checks() {
  struct Case {
    const char* name;
    VecR anchor;
    MatR keys;
    PoolIndex pools;
    Real tau;
    Real expected;
  };
  const VecR e1 = (VecR(2) << 1, 0).finished();
  const MatR same = (MatR(2, 2) << 1, 1, 0, 0).finished();
  const MatR orth = (MatR(2, 2) << 1, 0, 0, 1).finished();
  const MatR single = (MatR(2, 1) << 1, 0).finished();
  const std::vector<Case> cases{
      {"info_nce equal pos/neg = ln 2", e1, same, {{0}, {1}}, 1.0, std::log(2.0)},
      {"info_nce orthogonal neg = ln(1+e^-1)", e1, orth, {{0}, {1}}, 1.0, std::log1p(std::exp(-1.0))},
      {"info_nce no negatives = 0", e1, single, {{0}, {}}, 1.0, 0.0},
      {"info_nce tau=0.5 = ln(1+e^-2)", e1, orth, {{0}, {1}}, 0.5, std::log1p(std::exp(-2.0))},
  };
  std::vector<CheckResult> out;
  for (const auto& c : cases) {
    const Real v = multi_instance_info_nce<Real>(c.anchor, c.keys, c.pools, Temperature<Real>(c.tau)).loss;
    const Real err = std::abs(v - c.expected);
    out.push_back({c.name, err <= 1e-6, v, c.expected, err, 1e-6});
  }
  return out;
}

std::vector<CheckResult> gradient_checks(const AnchorGradient& gradient, int seeds) {
  std::vector<CheckResult> out;
  for (int dim : {4, 8, 32})
    for (int queue : {2, 8, 64})
      for (int seed = 0; seed < seeds; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(dim * 100003 + queue * 101 + seed));
        std::normal_distribution<double> n01(0.0, 1.0);
        VecR anchor(dim);
        for (auto& v : anchor) v = n01(rng);
        anchor.normalize();
        MatR keys(dim, queue);
        for (Eigen::Index j = 0; j < keys.size(); ++j) keys.data()[j] = n01(rng);
        for (Eigen::Index j = 0; j < queue; ++j) keys.col(j).normalize();
        std::uniform_int_distribution<int> lab(0, 2);
        std::vector<int> labels(static_cast<std::size_t>(queue));
        for (int& l : labels) l = lab(rng);
        labels[0] = 1;  // guarantee a positive for the anchor
        const PoolIndex pools = build_pools(1, labels, Stream::multiclass);
        const Temperature<Real> tau(std::uniform_real_distribution<double>(0.1, 1.0)(rng));

        const VecR analytic = gradient(anchor, keys, pools, tau);
        const VecR numeric = finite_difference_gradient(anchor, keys, pools, tau, 1e-5);
        const Real err = relative_error(analytic, numeric);
        char name[96];
        std::snprintf(name, sizeof name, "grad D=%d queue=%d seed=%d", dim, queue, seed);
        out.push_back({name, err < 1e-4, analytic.norm(), numeric.norm(), err, 1e-4});
      }
  return out;
}

bool SelfcheckReport::all_passed() const {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.pass; });
}

nlohmann::json SelfcheckReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results)
    arr.push_back({{"name", r.name},
                   {"pass", r.pass},
                   {"value", r.value},
                   {"expected", r.expected},
                   {"error", r.error},
                   {"tolerance", r.tolerance}});
  return {{"passed", all_passed()}, {"results", arr}};
}

std::string SelfcheckReport::to_text() const {
  std::ostringstream os;
  for (const auto& r : results) {
    char line[256];
    std::snprintf(line, sizeof line, "%s  %-44s value=%.9g expected=%.9g err=%.3g\n", r.pass ? "PASS" : "FAIL",
                  r.name.c_str(), r.value, r.expected, r.error);
    os << line;
  }
  os << (all_passed() ? "selfcheck: all checks passed\n" : "selfcheck: FAILED\n");
  return os.str();
}

SelfcheckReport run_selfcheck(const AnchorGradient& gradient) {
  SelfcheckReport rep;
  rep.results = analytic_loss_checks();
  for (auto& r : gradient_checks(gradient)) rep.results.push_back(std::move(r));
  return rep;
}

}  // namespace dfmtl
