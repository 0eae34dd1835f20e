#pragma once

#include <json.hpp>

#include "dln/derivatives.hpp"
#include "dln/landscape.hpp"
#include "dln/model.hpp"
#include "dln/nonlinear.hpp"

// JSON views of the report types, field names fixed to match the type
// definitions so downstream checks can key on them.

namespace dln {

inline nlohmann::json to_json(const MatrixReal& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json to_json(const VectorReal& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline nlohmann::json to_json(const ToleranceConfig& cfg) {
  return {{"rank_rel_tol", cfg.rank_rel_tol},
          {"eig_zero_tol", cfg.eig_zero_tol},
          {"grad_crit_tol", cfg.grad_crit_tol},
          {"fd_step", cfg.fd_step}};
}

inline nlohmann::json to_json(const AssumptionReport& a) {
  return {{"xxt_full_rank", a.xxt_full_rank},
          {"xyt_full_rank", a.xyt_full_rank},
          {"dy_le_dx", a.dy_le_dx},
          {"distinct_eigs", a.distinct_eigs}};
}

inline nlohmann::json to_json(const DataSpectrum& s) {
  nlohmann::json j{{"xxt_full_rank", s.xxt_full_rank},
                   {"xyt_full_rank", s.xyt_full_rank},
                   {"dy_le_dx", s.dy_le_dx},
                   {"distinct_eigs", s.distinct_eigs}};
  if (s.sigma.has_value()) {
    j["sigma"] = to_json(*s.sigma);
    j["eigvalues"] = to_json(s.eigvalues);
    j["eigvectors"] = to_json(s.eigvectors);
  }
  return j;
}

inline nlohmann::json to_json(const NecessaryConditionsReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& row : r.layers)
    layers.push_back({{"k", row.k},
                      {"range_inclusion_holds", row.range_inclusion_holds},
                      {"xr_annihilation_holds", row.xr_annihilation_holds},
                      {"rank_inequality_holds", row.rank_inequality_holds}});
  return {{"layers", layers},
          {"projector_is_top", r.projector_is_top},
          {"xr_zero", r.xr_zero}};
}

inline nlohmann::json to_json(const CriticalPointReport& r) {
  return {{"grad_norm", r.grad_norm},
          {"loss_value", r.loss_value},
          {"global_min_loss", r.global_min_loss},
          {"hessian_min_eig", r.hessian_min_eig},
          {"hessian_max_eig", r.hessian_max_eig},
          {"p_bar", r.p_bar},
          {"label", to_string(r.label)},
          {"assumption_flags", to_json(r.assumption_flags)},
          {"assumptions_ok", r.assumptions_ok},
          {"condition_report", to_json(r.condition_report)},
          {"theorem_violation", r.theorem_violation},
          {"diagnostic", r.diagnostic}};
}

inline nlohmann::json to_json(const HessianMatrix& h) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const LayerSpan& s : h.block_index)
    blocks.push_back({{"layer", s.layer}, {"offset", s.offset}, {"size", s.size}});
  nlohmann::json prov = nlohmann::json::array();
  for (std::size_t i = 0; i < h.provenance.size(); ++i)
    for (std::size_t j = 0; j < h.provenance[i].size(); ++j)
      prov.push_back({{"row_layer", h.block_index[i].layer},
                      {"col_layer", h.block_index[j].layer},
                      {"method", h.provenance[i][j] == BlockProvenance::analytic
                                     ? "analytic"
                                     : "finite-difference"}});
  return {{"dim", h.dim},
          {"block_index", blocks},
          {"provenance", prov},
          {"asymmetry_rel", h.asymmetry_rel},
          {"fd_crosscheck_max_rel", h.fd_crosscheck_max_rel}};
}

inline nlohmann::json to_json(const GdResult& g) {
  nlohmann::json traj = nlohmann::json::array();
  for (const GdRecord& rec : g.trajectory)
    traj.push_back(
        {{"iter", rec.iter}, {"loss", rec.loss}, {"grad_norm", rec.grad_norm}});
  return {{"status", to_string(g.status)}, {"trajectory", traj}};
}

}  // namespace dln
