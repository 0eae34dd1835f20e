// dln: analysis and construction commands for deep linear network loss
// surfaces. Reads matrices in the repo text format, emits one JSON report
// per run; reports embed the fully resolved configuration so runs can be
// reproduced byte for byte.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dln/derivatives.hpp"
#include "dln/landscape.hpp"
#include "dln/matrix_io.hpp"
#include "dln/model.hpp"
#include "dln/nonlinear.hpp"
#include "dln/serialize.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitAssumption = 2;
constexpr int kExitDiagnostic = 3;

struct Options {
  std::string x_path, y_path;
  std::string shape_str;
  std::string weights_dir;
  std::string out_path = "-";
  std::string out_weights;
  std::string out_matrix = "hessian.txt";
  std::string out_prefix;
  std::string top_layer_path;
  std::string index_set_str;
  std::uint64_t seed = 0;
  bool permissive = false;
  double rho = 0.5;
  double q = 0.0;
  bool q_set = false;
  long long samples = 100000;
  double step = 0.05;
  int iters = 20000;
  double stop_grad = 1e-8;
  double epsilon = 1e-6;
  int layer = 1;
  dln::ToleranceConfig tol;
};

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (...) {
      throw dln::ShapeError(std::string("cannot parse ") + what + ": '" + tok + "'");
    }
  }
  if (out.empty()) throw dln::ShapeError(std::string("empty ") + what);
  return out;
}

json config_json(const Options& o, const std::string& command) {
  json cfg;
  cfg["command"] = command;
  cfg["x_path"] = o.x_path;
  cfg["y_path"] = o.y_path;
  cfg["shape"] = o.shape_str;
  cfg["weights_dir"] = o.weights_dir;
  cfg["out_path"] = o.out_path;
  cfg["out_weights"] = o.out_weights;
  cfg["seed"] = o.seed;
  cfg["strict"] = !o.permissive;
  cfg["tolerances"] = dln::to_json(o.tol);
  cfg["rho"] = o.rho;
  cfg["q"] = o.q_set ? o.q : 1.0 / o.rho;
  cfg["samples"] = o.samples;
  cfg["step"] = o.step;
  cfg["iters"] = o.iters;
  cfg["stop_grad"] = o.stop_grad;
  cfg["epsilon"] = o.epsilon;
  cfg["layer"] = o.layer;
  cfg["index_set"] = o.index_set_str;
  return cfg;
}

void emit(const Options& o, const json& report) {
  const std::string text = report.dump(2) + "\n";
  if (o.out_path == "-" || o.out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(o.out_path);
    if (!out) throw dln::ParseError("cannot write report: " + o.out_path, 0);
    out << text;
  }
}

dln::DatasetPair load_data(const Options& o) {
  if (o.x_path.empty() || o.y_path.empty())
    throw dln::ShapeError("--x and --y are required");
  dln::DatasetPair data{dln::read_matrix(o.x_path), dln::read_matrix(o.y_path)};
  data.validate();
  return data;
}

dln::NetworkShape resolve_shape(const Options& o, const dln::DatasetPair& data,
                                const std::optional<dln::WeightStack>& w) {
  dln::NetworkShape shape;
  if (w.has_value()) {
    shape = w->shape;
    if (!o.shape_str.empty() &&
        !(dln::NetworkShape::from_widths(parse_int_list(o.shape_str, "shape")) ==
          shape))
      throw dln::ShapeError("--shape disagrees with the loaded weight manifest");
  } else {
    if (o.shape_str.empty())
      throw dln::ShapeError("--shape is required when no weights are given");
    shape = dln::NetworkShape::from_widths(parse_int_list(o.shape_str, "shape"));
  }
  if (shape.input_dim() != data.input_dim() ||
      shape.output_dim() != data.output_dim())
    throw dln::ShapeError(
        "shape ends (" + std::to_string(shape.input_dim()) + "," +
        std::to_string(shape.output_dim()) + ") do not match data dims (" +
        std::to_string(data.input_dim()) + "," +
        std::to_string(data.output_dim()) + ")");
  return shape;
}

std::optional<dln::WeightStack> maybe_load_weights(const Options& o) {
  if (o.weights_dir.empty()) return std::nullopt;
  return dln::load_weight_stack(o.weights_dir);
}

dln::WeightStack resolve_weights(const Options& o, const dln::DatasetPair& data,
                                 dln::NetworkShape* shape_out) {
  std::optional<dln::WeightStack> loaded = maybe_load_weights(o);
  const dln::NetworkShape shape = resolve_shape(o, data, loaded);
  if (shape_out) *shape_out = shape;
  if (loaded.has_value()) return *loaded;
  auto rng = dln::make_rng(dln::derive_seed(o.seed, 0x77));
  dln::WeightStack w = dln::zero_stack(shape);
  for (int k = 1; k <= shape.hidden_count() + 1; ++k)
    w.layer(k) = dln::random_gaussian(shape.widths[k], shape.widths[k - 1], rng, 0.5);
  return w;
}

json warning_block(const dln::AssumptionReport& a) {
  return {{"assumptions_hold", a.all_ok()},
          {"note", a.all_ok() ? ""
                              : "data assumptions fail; landscape statements "
                                "are not guaranteed at this point"}};
}

int cmd_analyze(const Options& o) {
  const dln::DatasetPair data = load_data(o);
  const dln::NetworkShape shape = resolve_shape(o, data, std::nullopt);
  const dln::DataSpectrum spectrum = dln::data_spectrum(data, o.tol);
  json report;
  report["config"] = config_json(o, "analyze");
  report["data_spectrum"] = dln::to_json(spectrum);
  report["assumption_report"] = dln::to_json(dln::to_assumption_report(spectrum));
  report["shape"] = shape.widths;
  report["p"] = shape.min_hidden_width();
  report["p_hat"] = shape.rank_budget();
  if (spectrum.sigma.has_value())
    report["loss_star"] = dln::loss_star_from_spectrum(spectrum, shape, data);
  report["warning"] = warning_block(dln::to_assumption_report(spectrum));
  emit(o, report);
  if (!o.permissive && !spectrum.all_assumptions()) return kExitAssumption;
  return kExitOk;
}

int cmd_grad_check(const Options& o) {
  const dln::DatasetPair data = load_data(o);
  dln::NetworkShape shape;
  const dln::WeightStack w = resolve_weights(o, data, &shape);
  const dln::GradientBlocks a = dln::gradient(w, data);
  const dln::GradientBlocks f = dln::fd_gradient(w, data, o.tol.fd_step);
  double max_rel = 0.0;
  for (std::size_t k = 0; k < a.blocks.size(); ++k)
    for (Eigen::Index i = 0; i < a.blocks[k].rows(); ++i)
      for (Eigen::Index j = 0; j < a.blocks[k].cols(); ++j) {
        const double av = a.blocks[k](i, j), fv = f.blocks[k](i, j);
        max_rel = std::max(max_rel, std::abs(av - fv) /
                                        (1.0 + std::max(std::abs(av), std::abs(fv))));
      }
  json report;
  report["config"] = config_json(o, "grad-check");
  report["grad_check"] = {{"max_rel_entry_err", max_rel},
                          {"analytic_norm", a.stacked_norm},
                          {"fd_norm", f.stacked_norm},
                          {"fd_step", o.tol.fd_step}};
  emit(o, report);
  return kExitOk;
}

int cmd_hessian(const Options& o) {
  const dln::DatasetPair data = load_data(o);
  dln::NetworkShape shape;
  const dln::WeightStack w = resolve_weights(o, data, &shape);
  const dln::HessianMatrix h = dln::full_hessian(w, data, o.tol);
  dln::write_matrix(o.out_matrix, h.matrix);
  const dln::SymEig eig = dln::sym_eig(h.matrix);
  json report;
  report["config"] = config_json(o, "hessian");
  report["hessian"] = dln::to_json(h);
  report["hessian"]["matrix_file"] = o.out_matrix;
  report["hessian"]["eigvalues"] = dln::to_json(eig.values);
  emit(o, report);
  return kExitOk;
}

int cmd_classify(const Options& o) {
  const dln::DatasetPair data = load_data(o);
  if (o.weights_dir.empty())
    throw dln::ShapeError("classify needs --weights");
  dln::NetworkShape shape;
  const dln::WeightStack w = resolve_weights(o, data, &shape);
  const dln::AssumptionReport assume = dln::check_assumptions(data, o.tol);
  json report;
  report["config"] = config_json(o, "classify");
  if (!o.permissive && !assume.all_ok()) {
    report["assumption_report"] = dln::to_json(assume);
    report["refused"] = true;
    report["warning"] = warning_block(assume);
    emit(o, report);
    return kExitAssumption;
  }
  const dln::CriticalPointReport rep = dln::classify_point(w, data, o.tol);
  report["critical_point_report"] = dln::to_json(rep);
  report["warning"] = warning_block(assume);
  emit(o, report);
  return rep.theorem_violation ? kExitDiagnostic : kExitOk;
}

int cmd_construct(const Options& o, const std::string& kind) {
  const dln::DatasetPair data = load_data(o);
  const dln::NetworkShape shape = resolve_shape(o, data, std::nullopt);
  if (o.out_weights.empty() && o.weights_dir.empty())
    throw dln::ShapeError("construct needs an output directory (--weights)");
  const std::string out_dir =
      o.out_weights.empty() ? o.weights_dir : o.out_weights;

  dln::WeightStack w = dln::zero_stack(shape);
  json info;
  std::string claimed;
  if (kind == "global-min") {
    const dln::GlobalMinimum gm = dln::global_minimum(shape, data, o.tol);
    w = gm.stack;
    info["loss_star"] = gm.loss_star;
    info["product"] = dln::to_json(gm.product);
    claimed = "GLOBAL_MIN";
  } else if (kind == "bad-saddle") {
    std::optional<dln::MatrixReal> top;
    if (!o.top_layer_path.empty()) top = dln::read_matrix(o.top_layer_path);
    w = dln::construct_bad_saddle(shape, data, o.tol, top, o.seed);
    claimed = "DEGENERATE_SADDLE";
  } else if (kind == "indefinite") {
    w = dln::construct_indefinite_point(shape, data, o.tol);
    claimed = "STRICT_SADDLE";
  } else if (kind == "index-set") {
    const std::vector<int> idx =
        o.index_set_str.empty() ? std::vector<int>{}
                                : parse_int_list(o.index_set_str, "index set");
    w = dln::construct_index_set_critical_point(data, shape, idx, o.tol);
  } else {
    throw dln::ShapeError("unknown construct kind: " + kind);
  }

  dln::save_weight_stack(out_dir, w);
  json report;
  report["config"] = config_json(o, "construct " + kind);
  info["weights_dir"] = out_dir;
  info["loss"] = dln::loss(w, data);
  info["grad_norm"] = dln::gradient(w, data).stacked_norm;
  if (!claimed.empty()) info["claimed_label"] = claimed;
  report["construct"] = info;
  emit(o, report);
  return kExitOk;
}

int cmd_perturb(const Options& o) {
  const dln::DatasetPair data = load_data(o);
  if (o.weights_dir.empty()) throw dln::ShapeError("perturb needs --weights");
  dln::NetworkShape shape;
  const dln::WeightStack w = resolve_weights(o, data, &shape);
  const double loss_before = dln::loss(w, data);
  const dln::PerturbationResult res = dln::loss_preserving_rank_perturbation(
      w, data, o.layer, o.epsilon, o.seed, o.tol);
  if (!o.out_weights.empty()) dln::save_weight_stack(o.out_weights, res.stack);
  json report;
  report["config"] = config_json(o, "perturb");
  report["perturb"] = {{"layer", o.layer},
                       {"epsilon", o.epsilon},
                       {"rank_before", res.rank_before},
                       {"rank_after", res.rank_after},
                       {"rank_increased", res.rank_increased},
                       {"rank_saturated", res.rank_saturated},
                       {"loss_before", loss_before},
                       {"loss_after", dln::loss(res.stack, data)},
                       {"out_weights", o.out_weights}};
  emit(o, report);
  return kExitOk;
}

int cmd_train(const Options& o) {
  const dln::DatasetPair data = load_data(o);
  dln::NetworkShape shape;
  const dln::WeightStack w0 = resolve_weights(o, data, &shape);
  const dln::GdResult res =
      dln::train_gd(w0, data, o.step, o.iters, o.stop_grad);
  if (!o.out_weights.empty()) dln::save_weight_stack(o.out_weights, res.final_stack);
  json report;
  report["config"] = config_json(o, "train");
  report["train"] = dln::to_json(res);
  report["train"]["final_loss"] = res.trajectory.back().loss;
  report["train"]["final_grad_norm"] = res.trajectory.back().grad_norm;
  report["train"]["out_weights"] = o.out_weights;
  const dln::DataSpectrum spectrum = dln::data_spectrum(data, o.tol);
  if (spectrum.sigma.has_value())
    report["train"]["loss_star"] = dln::loss_star_from_spectrum(spectrum, shape, data);
  emit(o, report);
  return kExitOk;
}

int cmd_relu_mc(const Options& o) {
  const dln::DatasetPair data = load_data(o);
  dln::NetworkShape shape;
  const dln::WeightStack w = resolve_weights(o, data, &shape);
  const dln::PathModel model = dln::PathModel::make(
      shape, o.rho, o.q_set ? std::optional<double>(o.q) : std::nullopt, o.seed);
  const dln::McResult mc = dln::mc_expectation(model, w, data.X, o.samples);
  const dln::MatrixReal linear = dln::forward(w, data.X);

  const std::string prefix = o.out_prefix.empty() ? "relu_mc" : o.out_prefix;
  const std::string mean_file = prefix + "_mean.txt";
  const std::string stderr_file = prefix + "_stderr.txt";
  const std::string linear_file = prefix + "_linear.txt";
  dln::write_matrix(mean_file, mc.mean);
  dln::write_matrix(stderr_file, mc.stderr_of_mean);
  dln::write_matrix(linear_file, linear);

  double max_abs_dev = (mc.mean - linear).cwiseAbs().maxCoeff();
  json report;
  report["config"] = config_json(o, "relu-mc");
  report["relu_mc"] = {{"rho", model.rho},
                       {"q", model.q},
                       {"n_samples", mc.n_samples},
                       {"seed", mc.seed},
                       {"shard_count", mc.shard_count},
                       {"psi_per_output", model.psi_per_output},
                       {"mean_file", mean_file},
                       {"stderr_file", stderr_file},
                       {"linear_file", linear_file},
                       {"max_abs_dev_from_linear", max_abs_dev},
                       {"expected_loss", 0.5 * (mc.mean - data.Y).squaredNorm()},
                       {"linear_loss", dln::loss(w, data)}};
  emit(o, report);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"deep linear network loss-surface toolkit"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--x", o.x_path, "input matrix X (text format)");
    cmd->add_option("--y", o.y_path, "target matrix Y (text format)");
    cmd->add_option("--shape", o.shape_str, "widths d_x,d_1,...,d_y");
    cmd->add_option("--weights", o.weights_dir, "weight stack directory");
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--out", o.out_path, "JSON report path ('-' = stdout)");
    cmd->add_flag("--permissive", o.permissive,
                  "proceed with a warning when data assumptions fail");
    cmd->add_flag("--strict", [&](std::int64_t) { o.permissive = false; },
                  "refuse analysis when data assumptions fail (default)");
    cmd->add_option("--rank-tol", o.tol.rank_rel_tol, "relative rank cutoff");
    cmd->add_option("--eig-tol", o.tol.eig_zero_tol, "eigenvalue zero band");
    cmd->add_option("--grad-tol", o.tol.grad_crit_tol, "criticality threshold");
    cmd->add_option("--fd-step", o.tol.fd_step, "finite-difference base step");
  };

  CLI::App* analyze = app.add_subcommand("analyze", "data spectrum and assumptions");
  add_common(analyze);
  CLI::App* gradcheck =
      app.add_subcommand("grad-check", "analytic gradient vs finite differences");
  add_common(gradcheck);
  CLI::App* hessian = app.add_subcommand("hessian", "assemble the full Hessian");
  add_common(hessian);
  hessian->add_option("--out-matrix", o.out_matrix, "Hessian matrix file");
  CLI::App* classify = app.add_subcommand("classify", "critical point report");
  add_common(classify);

  CLI::App* construct = app.add_subcommand("construct", "build special points");
  construct->require_subcommand(1);
  std::vector<std::string> kinds = {"global-min", "bad-saddle", "indefinite",
                                    "index-set"};
  std::map<std::string, CLI::App*> construct_cmds;
  for (const std::string& kind : kinds) {
    CLI::App* c = construct->add_subcommand(kind);
    add_common(c);
    c->add_option("--out-weights", o.out_weights, "output weight directory");
    if (kind == "bad-saddle")
      c->add_option("--top-layer", o.top_layer_path, "matrix file for W_{H+1}");
    if (kind == "index-set")
      c->add_option("--index-set", o.index_set_str, "eigenvector indices, e.g. 1,3");
    construct_cmds[kind] = c;
  }

  CLI::App* perturb = app.add_subcommand("perturb", "loss-preserving rank bump");
  add_common(perturb);
  perturb->add_option("--layer", o.layer, "layer index k");
  perturb->add_option("--epsilon", o.epsilon, "perturbation size");
  perturb->add_option("--out-weights", o.out_weights, "output weight directory");

  CLI::App* train = app.add_subcommand("train", "fixed-step gradient descent");
  add_common(train);
  train->add_option("--step", o.step, "step size");
  train->add_option("--iters", o.iters, "max iterations");
  train->add_option("--stop-grad", o.stop_grad, "gradient norm stop threshold");
  train->add_option("--out-weights", o.out_weights, "final weight directory");

  CLI::App* relu = app.add_subcommand("relu-mc", "stochastic-gate Monte Carlo");
  add_common(relu);
  relu->add_option("--rho", o.rho, "gate success probability");
  auto* qopt = relu->add_option("--q", o.q, "normalization factor (default 1/rho)");
  relu->add_option("--samples", o.samples, "number of Monte Carlo draws");
  relu->add_option("--out-prefix", o.out_prefix, "prefix for result matrix files");

  try {
    app.parse(argc, argv);
    o.q_set = qopt->count() > 0;
    o.tol.validate();

    if (*analyze) return cmd_analyze(o);
    if (*gradcheck) return cmd_grad_check(o);
    if (*hessian) return cmd_hessian(o);
    if (*classify) return cmd_classify(o);
    if (*construct) {
      for (const auto& [kind, cmd] : construct_cmds)
        if (*cmd) return cmd_construct(o, kind);
    }
    if (*perturb) return cmd_perturb(o);
    if (*train) return cmd_train(o);
    if (*relu) return cmd_relu_mc(o);
    std::cerr << "no command given\n";
    return kExitInput;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? kExitInput : kExitOk;
  } catch (const dln::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const dln::ShapeError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const dln::AssumptionError& e) {
    std::cerr << "assumption violation: " << e.what() << "\n";
    return kExitAssumption;
  } catch (const dln::NoNullSpaceError& e) {
    std::cerr << "perturbation error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitDiagnostic;
  }
}
