#include "mfda/filters.hpp"

#include <string>

#include "mfda/errors.hpp"

namespace mfda::filters {

using ens::cross_cov;
using ens::ensemble_mean;

ObservationModel ObservationModel::identity(Eigen::Index n, double variance) {
  return {Matrix::Identity(n, n), variance * Matrix::Identity(n, n)};
}

ObservationModel ObservationModel::select(Eigen::Index n, const std::vector<Eigen::Index>& components,
                                          double variance) {
  const auto m = static_cast<Eigen::Index>(components.size());
  ObservationModel obs{Matrix::Zero(m, n), variance * Matrix::Identity(m, m)};
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index k = components[static_cast<std::size_t>(i)];
    if (k < 0 || k >= n) throw InvalidArgument("ObservationModel::select: component out of range");
    obs.H(i, k) = 1.0;
  }
  return obs;
}

void ObservationModel::validate() const {
  if (R.rows() != H.rows() || R.cols() != H.rows()) throw InvalidArgument("ObservationModel: R must be m x m");
  if (relative_asymmetry(R) > 1e-12) throw InvalidArgument("ObservationModel: R is not symmetric");
  Eigen::LLT<Matrix> llt(R);
  if (llt.info() != Eigen::Success) throw InvalidArgument("ObservationModel: R is not positive definite");
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

Matrix project(const Coupling& c, const Matrix& x) {
  return std::visit(Overloaded{[&](const rom::LinearCoupling& l) { return l.project(x); },
                               [&](const NonlinearCoupling& nl) { return ae::encode(x, nl.params); },
                               [&](const IdentityInPrincipal& id) { return ae::encode(x, id.params); }},
                    c);
}

Matrix interpolate(const Coupling& c, const Matrix& u) {
  return std::visit(Overloaded{[&](const rom::LinearCoupling& l) { return l.interpolate(u); },
                               [&](const NonlinearCoupling& nl) { return ae::decode(u, nl.params); },
                               [&](const IdentityInPrincipal& id) { return ae::decode(u, id.params); }},
                    c);
}

Eigen::Index reduced_dim(const Coupling& c) {
  return std::visit(Overloaded{[](const rom::LinearCoupling& l) { return l.r(); },
                               [](const NonlinearCoupling& nl) { return nl.params.r(); },
                               [](const IdentityInPrincipal& id) { return id.params.r(); }},
                    c);
}

Eigen::Index full_dim(const Coupling& c) {
  return std::visit(Overloaded{[](const rom::LinearCoupling& l) { return l.n(); },
                               [](const NonlinearCoupling& nl) { return nl.params.n(); },
                               [](const IdentityInPrincipal& id) { return id.params.n(); }},
                    c);
}

void MultifidelityState::validate() const {
  if (u_hat.size() != x.size()) throw InvalidArgument("MultifidelityState: U_hat must pair with X member-wise");
  if (u.size() < 2) throw InvalidArgument("MultifidelityState: N_U must be >= 2");
  if (u.dim() != u_hat.dim()) throw InvalidArgument("MultifidelityState: U and U_hat differ in dimension");
  if (!x.members.allFinite() || !u_hat.members.allFinite() || !u.members.allFinite()) {
    throw InvalidArgument("MultifidelityState: non-finite members");
  }
}

void FilterConfig::validate(const Coupling* coupling) const {
  inflation.validate();
  perturbed_obs.validate();
  switch (kind) {
    case FilterKind::kEnKF:
      return;
    case FilterKind::kMFEnKF:
      if (coupling == nullptr || std::holds_alternative<NonlinearCoupling>(*coupling)) {
        throw InvalidArgument("MFEnKF requires a linear or identity-in-principal coupling");
      }
      return;
    case FilterKind::kNLMFEnKF:
      if (coupling == nullptr || !std::holds_alternative<NonlinearCoupling>(*coupling)) {
        throw InvalidArgument("NL-MFEnKF requires a nonlinear coupling");
      }
      return;
  }
}

PerturbedObservations draw_perturbed_observations(const Vector& y, const ObservationModel& obs, Eigen::Index n_x,
                                                  Eigen::Index n_u, double s, const StreamKey& key) {
  StreamKey kx = key;
  kx.role = StreamRole::kPerturbPrincipal;
  StreamKey ku = key;
  ku.role = StreamRole::kPerturbAncillary;
  RandomStream rx(kx);
  RandomStream ru(ku);
  PerturbedObservations out;
  out.principal = ens::sample_perturbed_observations(y, obs.R, n_x, 1.0, rx).members;
  if (n_u > 0) out.ancillary = ens::sample_perturbed_observations(y, obs.R, n_u, s, ru).members;
  return out;
}

namespace {

Matrix symmetrized(const Matrix& s) {
  const double asym = relative_asymmetry(s);
  if (asym > 1e-10) {
    throw LinearSolveError("innovation covariance asymmetry " + std::to_string(asym) + " exceeds 1e-10");
  }
  return 0.5 * (s + s.transpose());
}

}  // namespace

Matrix enkf_analysis(const Matrix& xb, const Matrix& y_perturbed, const ObservationModel& obs) {
  if (xb.cols() < 2) throw InvalidArgument("enkf_analysis: need at least two members");
  if (xb.rows() != obs.n()) throw InvalidArgument("enkf_analysis: state dimension does not match H");
  if (y_perturbed.rows() != obs.m() || y_perturbed.cols() != xb.cols()) {
    throw InvalidArgument("enkf_analysis: perturbed observations have the wrong shape");
  }
  const Matrix hx = obs.apply(xb);
  const Matrix innovation = symmetrized(cross_cov(hx, hx) + obs.R);
  const Matrix gain = right_solve_spd(cross_cov(xb, hx), innovation);
  return xb - gain * (hx - y_perturbed);
}

Matrix enkf_step(const Matrix& xb, const Vector& y, const ObservationModel& obs, double alpha, RandomStream& rng) {
  const Matrix inflated = ens::inflate(xb, alpha);
  const auto y_pert = ens::sample_perturbed_observations(y, obs.R, xb.cols(), 1.0, rng);
  return enkf_analysis(inflated, y_pert.members, obs);
}

Matrix optimal_gain(const Matrix& cov_x_uhat, const Matrix& cov_uhat_uhat, const Matrix& cov_u_u) {
  if (cov_uhat_uhat.rows() != cov_u_u.rows() || cov_uhat_uhat.cols() != cov_u_u.cols() ||
      cov_x_uhat.cols() != cov_u_u.rows()) {
    throw InvalidArgument("optimal_gain: incompatible covariance shapes");
  }
  return right_solve_spd(cov_x_uhat, symmetrized(cov_uhat_uhat + cov_u_u));
}

MultifidelityState mf_forecast(const MultifidelityState& state, const dynamics::Tendency& fom,
                               const dynamics::Tendency& rom, const dynamics::IntegratorConfig& cfg,
                               std::size_t n_windows) {
  if (n_windows == 0) return state;
  MultifidelityState out = state;
  out.x.members = dynamics::advance(fom, state.x.members, cfg, n_windows);
  // U_hat and U share the surrogate, so they are propagated as one batch.
  const Eigen::Index n_x = state.u_hat.size();
  Matrix both(state.u.dim(), n_x + state.u.size());
  both << state.u_hat.members, state.u.members;
  try {
    both = dynamics::advance(rom, both, cfg, n_windows);
  } catch (const NumericalBlowup& e) {
    const bool ancillary = e.member() >= n_x;
    const auto member = ancillary ? e.member() - n_x : e.member();
    throw NumericalBlowup(std::string("surrogate forecast blew up in ") + (ancillary ? "ancillary" : "control") +
                              " member " + std::to_string(member),
                          e.step(), member);
  }
  out.u_hat.members = both.leftCols(n_x);
  out.u.members = both.rightCols(state.u.size());
  return out;
}

ObservedEnsembles mf_observe(const MultifidelityState& state, const Coupling& coupling, const ObservationModel& obs) {
  ObservedEnsembles o;
  o.hx = obs.apply(state.x.members);
  o.u_hat_interp = interpolate(coupling, state.u_hat.members);
  o.u_interp = interpolate(coupling, state.u.members);
  o.hu_hat = obs.apply(o.u_hat_interp);
  o.hu = obs.apply(o.u_interp);
  return o;
}

Matrix semi_linear_cov(const Matrix& a, const Matrix& a_hat, const Matrix& a_anc, const Matrix& hx,
                       const Matrix& hu_hat, const Matrix& hu) {
  return cross_cov(a, hx) + 0.25 * cross_cov(a_hat, hu_hat) + 0.25 * cross_cov(a_anc, hu) -
         0.5 * cross_cov(a, hu_hat) - 0.5 * cross_cov(a_hat, hx);
}

Matrix innovation_covariance(const ObservedEnsembles& o, const ObservationModel& obs) {
  return symmetrized(semi_linear_cov(o.hx, o.hu_hat, o.hu, o.hx, o.hu_hat, o.hu) + obs.R);
}

Matrix mfenkf_gain(const Matrix& hx, const Matrix& hu_hat, const Matrix& hu, const Matrix& x,
                   const Matrix& u_hat_interp, const Matrix& u_interp, const ObservationModel& obs) {
  if (x.cols() < 2 || hu.cols() < 2) throw InvalidArgument("mfenkf_gain: N_X and N_U must be >= 2");
  const ObservedEnsembles o{hx, hu_hat, hu, u_hat_interp, u_interp};
  const Matrix cross = semi_linear_cov(x, u_hat_interp, u_interp, hx, hu_hat, hu);
  return right_solve_spd(cross, innovation_covariance(o, obs));
}

Vector total_mean(const MultifidelityState& state, const Coupling& coupling) {
  return ensemble_mean(state.x.members) - 0.5 * (ensemble_mean(interpolate(coupling, state.u_hat.members)) -
                                                 ensemble_mean(interpolate(coupling, state.u.members)));
}

namespace {

void check_perturbed(const MultifidelityState& s, const ObservationModel& obs, const PerturbedObservations& y) {
  if (y.principal.rows() != obs.m() || y.principal.cols() != s.x.size() || y.ancillary.rows() != obs.m() ||
      y.ancillary.cols() != s.u.size()) {
    throw InvalidArgument("perturbed observations do not match ensemble sizes");
  }
}

MultifidelityState inflated(const MultifidelityState& s, const ens::InflationConfig& inf) {
  MultifidelityState out = s;
  out.x.members = ens::inflate(s.x.members, inf.alpha_x);
  out.u_hat.members = ens::inflate(s.u_hat.members, inf.alpha_x);
  out.u.members = ens::inflate(s.u.members, inf.alpha_u);
  return out;
}

/// Linear MFEnKF on a state whose control ensembles live in the space of
/// `coupling`; inflation already applied.
MultifidelityState linear_update(const MultifidelityState& s, const ObservationModel& obs,
                                 const rom::LinearCoupling& coupling, const PerturbedObservations& y) {
  const Coupling c = coupling;
  const ObservedEnsembles o = mf_observe(s, c, obs);
  const Matrix gain = mfenkf_gain(o.hx, o.hu_hat, o.hu, s.x.members, o.u_hat_interp, o.u_interp, obs);
  const Matrix control_gain = coupling.theta * gain;

  MultifidelityState a = s;
  a.x.members = s.x.members - gain * (o.hx - y.principal);
  a.u_hat.members = s.u_hat.members - control_gain * (o.hu_hat - y.principal);
  a.u.members = s.u.members - control_gain * (o.hu - y.ancillary);

  const Vector z_mean = total_mean(a, c);
  const Vector z_control = coupling.theta * z_mean;
  ens::set_mean(a.x.members, z_mean);
  ens::set_mean(a.u_hat.members, z_control);
  ens::set_mean(a.u.members, z_control);
  a.u_hat.members = coupling.project(a.x.members);
  return a;
}

}  // namespace

MultifidelityState mfenkf_analysis(const MultifidelityState& state, const ObservationModel& obs,
                                   const Coupling& coupling, const FilterConfig& cfg,
                                   const PerturbedObservations& y_pert) {
  state.validate();
  obs.validate();
  cfg.inflation.validate();
  check_perturbed(state, obs, y_pert);
  const MultifidelityState s = inflated(state, cfg.inflation);

  if (const auto* linear = std::get_if<rom::LinearCoupling>(&coupling)) {
    return linear_update(s, obs, *linear, y_pert);
  }
  if (const auto* id = std::get_if<IdentityInPrincipal>(&coupling)) {
    const Eigen::Index n = id->params.n();
    rom::LinearCoupling eye;
    eye.theta = Matrix::Identity(n, n);
    eye.phi = Matrix::Identity(n, n);
    eye.singular_values = Vector::Ones(n);
    MultifidelityState principal = s;
    principal.u_hat.members = ae::decode(s.u_hat.members, id->params);
    principal.u.members = ae::decode(s.u.members, id->params);
    MultifidelityState a = linear_update(principal, obs, eye, y_pert);
    a.u_hat = {ae::encode(a.u_hat.members, id->params), ens::Space::kControl};
    a.u = {ae::encode(a.u.members, id->params), ens::Space::kControl};
    return a;
  }
  throw InvalidArgument("mfenkf_analysis: nonlinear coupling requires nlmfenkf_analysis");
}

MultifidelityState nlmfenkf_analysis(const MultifidelityState& state, const ObservationModel& obs,
                                     const Coupling& coupling, const FilterConfig& cfg,
                                     const PerturbedObservations& y_pert) {
  const auto* nl = std::get_if<NonlinearCoupling>(&coupling);
  if (nl == nullptr) throw InvalidArgument("nlmfenkf_analysis: requires a nonlinear coupling");
  state.validate();
  obs.validate();
  cfg.inflation.validate();
  check_perturbed(state, obs, y_pert);
  const MultifidelityState s = inflated(state, cfg.inflation);

  const ObservedEnsembles o = mf_observe(s, coupling, obs);
  const Matrix innovation = innovation_covariance(o, obs);
  const Matrix theta_x = ae::encode(s.x.members, nl->params);
  const Matrix cross = semi_linear_cov(s.x.members, o.u_hat_interp, o.u_interp, o.hx, o.hu_hat, o.hu);
  const Matrix cross_theta = semi_linear_cov(theta_x, s.u_hat.members, s.u.members, o.hx, o.hu_hat, o.hu);
  const Matrix gain = right_solve_spd(cross, innovation);
  const Matrix gain_theta = right_solve_spd(cross_theta, innovation);

  MultifidelityState a = s;
  a.x.members = s.x.members - gain * (o.hx - y_pert.principal);
  a.u_hat.members = s.u_hat.members - gain_theta * (o.hu_hat - y_pert.principal);
  a.u.members = s.u.members - gain_theta * (o.hu - y_pert.ancillary);

  const Vector z_mean = total_mean(a, coupling);
  Vector ancillary_mean;
  if (cfg.mean_adjustment == MeanAdjustment::kKalmanApproximate) {
    // mean theta(Z^a) = mean theta(X^a) - 1/2 (mean U_hat^a - mean U^a), post-update
    ancillary_mean = ensemble_mean(ae::encode(a.x.members, nl->params)) -
                     0.5 * (ensemble_mean(a.u_hat.members) - ensemble_mean(a.u.members));
  }

  ens::set_mean(a.x.members, z_mean);
  a.u_hat.members = ae::encode(a.x.members, nl->params);
  if (cfg.mean_adjustment == MeanAdjustment::kControlSpaceUnbiased) ancillary_mean = ensemble_mean(a.u_hat.members);
  ens::set_mean(a.u.members, ancillary_mean);
  return a;
}

MultifidelityState mf_analysis(const MultifidelityState& state, const ObservationModel& obs, const Coupling& coupling,
                               const FilterConfig& cfg, const PerturbedObservations& y_pert) {
  switch (cfg.kind) {
    case FilterKind::kMFEnKF:
      return mfenkf_analysis(state, obs, coupling, cfg, y_pert);
    case FilterKind::kNLMFEnKF:
      return nlmfenkf_analysis(state, obs, coupling, cfg, y_pert);
    case FilterKind::kEnKF:
      break;
  }
  throw InvalidArgument("mf_analysis: EnKF has no multifidelity state");
}

}  // namespace mfda::filters
