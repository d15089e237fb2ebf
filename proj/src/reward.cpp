// Copyright 2026 The Prefinf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "prefinf/reward.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "prefinf/rng.hpp"
#include <nlohmann/json.hpp>

namespace prefinf {

using nlohmann::json;

void RewardModelConfig::validate() const {
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (arch == Arch::kMlp1 && hidden_dim < 1)
    throw std::invalid_argument("hidden_dim must be >= 1 for mlp1");
  if (l2_reg < 0.0) throw std::invalid_argument("l2_reg must be >= 0");
  if (train.max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
  if (train.step_size <= 0.0) throw std::invalid_argument("step_size must be > 0");
  if (train.tolerance < 0.0) throw std::invalid_argument("tolerance must be >= 0");
}

int ParamBlocks::total_dim() const {
  int p = 0;
  for (const auto& b : blocks) p += b.size();
  return p;
}

void ParamBlocks::set_zero() {
  for (auto& b : blocks) b.values.setZero();
}

double ParamBlocks::squared_norm() const {
  double s = 0.0;
  for (const auto& b : blocks) s += b.values.squaredNorm();
  return s;
}

double ParamBlocks::dot(const ParamBlocks& other) const {
  double s = 0.0;
  for (size_t i = 0; i < blocks.size(); ++i)
    s += blocks[i].values.dot(other.blocks[i].values);
  return s;
}

void ParamBlocks::axpy(double a, const ParamBlocks& other) {
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].values += a * other.blocks[i].values;
}

void ParamBlocks::scale(double a) {
  for (auto& b : blocks) b.values *= a;
}

Eigen::VectorXd ParamBlocks::flatten() const {
  Eigen::VectorXd v(total_dim());
  int off = 0;
  for (const auto& b : blocks) {
    v.segment(off, b.size()) = b.values;
    off += b.size();
  }
  return v;
}

void ParamBlocks::unflatten(const Eigen::VectorXd& v) {
  int off = 0;
  for (auto& b : blocks) {
    b.values = v.segment(off, b.size());
    off += b.size();
  }
}

ParamBlocks ParamBlocks::zeros_like(const ParamBlocks& shape) {
  ParamBlocks out = shape;
  out.set_zero();
  return out;
}

namespace {

ParamBlocks make_params(const RewardModelConfig& cfg) {
  ParamBlocks p;
  if (cfg.arch == Arch::kLinear) {
    p.blocks.push_back({"theta", cfg.feature_dim, 1,
                        Eigen::VectorXd::Zero(cfg.feature_dim)});
  } else {
    p.blocks.push_back({"w1", cfg.hidden_dim, cfg.feature_dim,
                        Eigen::VectorXd::Zero(cfg.hidden_dim * cfg.feature_dim)});
    p.blocks.push_back({"b1", cfg.hidden_dim, 1, Eigen::VectorXd::Zero(cfg.hidden_dim)});
    p.blocks.push_back({"w2", cfg.hidden_dim, 1, Eigen::VectorXd::Zero(cfg.hidden_dim)});
  }
  return p;
}

Eigen::Map<const Eigen::VectorXd> as_vec(const FeatureVector& f) {
  return {f.data(), static_cast<Eigen::Index>(f.size())};
}

// Hidden activations a = tanh(W1 x + b1) for mlp1 models.
Eigen::VectorXd mlp1_hidden(const RewardModel& m, const FeatureVector& feat) {
  const auto& w1 = m.params.blocks[0];
  const auto& b1 = m.params.blocks[1];
  Eigen::Map<const Eigen::MatrixXd> W1(w1.values.data(), w1.rows, w1.cols);
  return (W1 * as_vec(feat) + b1.values).array().tanh();
}

void check_dim(const RewardModel& m, const FeatureVector& f) {
  if (static_cast<int>(f.size()) != m.config.feature_dim)
    throw std::invalid_argument("feature length does not match model feature_dim");
}

}  // namespace

double RewardModel::reward(const FeatureVector& feat) const {
  check_dim(*this, feat);
  if (config.arch == Arch::kLinear) return params.blocks[0].values.dot(as_vec(feat));
  return params.blocks[2].values.dot(mlp1_hidden(*this, feat));
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

double log_sigmoid_neg(double m) {
  // softplus(-m), stable for |m| up to ~1e3 and beyond
  double t = -m;
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

double margin(const RewardModel& model, const PreferenceExample& ex) {
  return model.reward(ex.chosen()) - model.reward(ex.rejected());
}

double pref_loss(const RewardModel& model, const PreferenceExample& ex) {
  return log_sigmoid_neg(margin(model, ex));
}

ParamBlocks grad_example(const RewardModel& model, const PreferenceExample& ex) {
  check_dim(model, ex.feat0);
  check_dim(model, ex.feat1);
  ParamBlocks g = ParamBlocks::zeros_like(model.params);
  const FeatureVector& xc = ex.chosen();
  const FeatureVector& xr = ex.rejected();

  if (model.config.arch == Arch::kLinear) {
    const double m = model.params.blocks[0].values.dot(as_vec(xc)) -
                     model.params.blocks[0].values.dot(as_vec(xr));
    const double coef = -(1.0 - sigmoid(m));
    g.blocks[0].values = coef * (as_vec(xc) - as_vec(xr));
    return g;
  }

  // mlp1: r(x) = w2 . tanh(W1 x + b1). Backprop both responses.
  const auto& w2 = model.params.blocks[2].values;
  const Eigen::VectorXd ac = mlp1_hidden(model, xc);
  const Eigen::VectorXd ar = mlp1_hidden(model, xr);
  const double m = w2.dot(ac) - w2.dot(ar);
  const double coef = -(1.0 - sigmoid(m));

  const Eigen::VectorXd dc = w2.array() * (1.0 - ac.array().square());
  const Eigen::VectorXd dr = w2.array() * (1.0 - ar.array().square());

  Eigen::Map<Eigen::MatrixXd> gW1(g.blocks[0].values.data(), g.blocks[0].rows,
                                  g.blocks[0].cols);
  gW1 = coef * (dc * as_vec(xc).transpose() - dr * as_vec(xr).transpose());
  g.blocks[1].values = coef * (dc - dr);
  g.blocks[2].values = coef * (ac - ar);
  return g;
}

double training_loss(const RewardModel& model, const PreferenceDataset& ds) {
  double s = 0.0;
  for (const auto& ex : ds.examples) s += pref_loss(model, ex);
  return s / ds.size() + 0.5 * model.config.l2_reg * model.params.squared_norm();
}

ParamBlocks training_grad(const RewardModel& model, const PreferenceDataset& ds) {
  ParamBlocks g = ParamBlocks::zeros_like(model.params);
  for (const auto& ex : ds.examples) g.axpy(1.0, grad_example(model, ex));
  g.scale(1.0 / ds.size());
  g.axpy(model.config.l2_reg, model.params);
  return g;
}

TrainResult train(const PreferenceDataset& ds, const RewardModelConfig& config) {
  config.validate();
  if (ds.empty()) throw std::invalid_argument("cannot train on an empty dataset");
  if (ds.feature_dim != config.feature_dim)
    throw std::invalid_argument("dataset feature_dim does not match model config");

  TrainResult r;
  r.model.config = config;
  r.model.params = make_params(config);
  if (config.arch == Arch::kMlp1) {
    Rng rng(sub_seed(config.train.seed, "init"));
    auto& p = r.model.params;
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(config.feature_dim));
    const double w2_scale = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
    for (int i = 0; i < p.blocks[0].size(); ++i)
      p.blocks[0].values[i] = w1_scale * rng.normal();
    for (int i = 0; i < p.blocks[2].size(); ++i)
      p.blocks[2].values[i] = w2_scale * rng.normal();
  }

  for (int epoch = 0; epoch < config.train.max_epochs; ++epoch) {
    const double loss = training_loss(r.model, ds);
    if (!std::isfinite(loss))
      throw std::runtime_error("training diverged at epoch " + std::to_string(epoch));
    r.loss_history.push_back(loss);
    ParamBlocks g = training_grad(r.model, ds);
    const double gnorm = std::sqrt(g.squared_norm());
    if (gnorm < config.train.tolerance) {
      r.final_loss = loss;
      r.final_grad_norm = gnorm;
      r.epochs_run = epoch;
      return r;
    }
    r.model.params.axpy(-config.train.step_size, g);
    r.epochs_run = epoch + 1;
  }
  r.final_loss = training_loss(r.model, ds);
  if (!std::isfinite(r.final_loss))
    throw std::runtime_error("training diverged at epoch " +
                             std::to_string(config.train.max_epochs));
  r.loss_history.push_back(r.final_loss);
  r.final_grad_norm = std::sqrt(training_grad(r.model, ds).squared_norm());
  return r;
}

double eval_accuracy(const RewardModel& model, const PreferenceDataset& ds) {
  if (ds.empty()) throw std::invalid_argument("empty dataset");
  double s = 0.0;
  for (const auto& ex : ds.examples) {
    const double m = margin(model, ex);
    s += m > 0.0 ? 1.0 : (m == 0.0 ? 0.5 : 0.0);
  }
  return s / ds.size();
}

Eigen::MatrixXd exact_hessian(const PreferenceDataset& ds, const RewardModel& model) {
  const int p = model.params.total_dim();
  if (p > 2000)
    throw std::invalid_argument("exact_hessian guard: parameter dim " +
                                std::to_string(p) + " > 2000");
  if (ds.empty()) throw std::invalid_argument("empty dataset");

  if (model.config.arch == Arch::kLinear) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
    const auto& theta = model.params.blocks[0].values;
    for (const auto& ex : ds.examples) {
      const Eigen::VectorXd delta = as_vec(ex.chosen()) - as_vec(ex.rejected());
      const double s = sigmoid(theta.dot(delta));
      H.noalias() += s * (1.0 - s) * delta * delta.transpose();
    }
    H /= static_cast<double>(ds.size());
    H.diagonal().array() += model.config.l2_reg;
    return H;
  }

  // mlp1: central differences of the analytic gradient.
  const double eps = 1e-5;
  RewardModel probe = model;
  Eigen::VectorXd theta0 = model.params.flatten();
  Eigen::MatrixXd H(p, p);
  for (int j = 0; j < p; ++j) {
    Eigen::VectorXd t = theta0;
    t[j] += eps;
    probe.params.unflatten(t);
    Eigen::VectorXd gp = training_grad(probe, ds).flatten();
    t[j] = theta0[j] - eps;
    probe.params.unflatten(t);
    Eigen::VectorXd gm = training_grad(probe, ds).flatten();
    H.col(j) = (gp - gm) / (2.0 * eps);
  }
  const double asym = (H - H.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(1.0, H.cwiseAbs().maxCoeff()))
    throw std::runtime_error("hessian asymmetry above tolerance");
  return 0.5 * (H + H.transpose());
}

namespace {

json config_to_json(const RewardModelConfig& c) {
  json j;
  j["arch"] = to_string(c.arch);
  j["feature_dim"] = c.feature_dim;
  if (c.arch == Arch::kMlp1) j["hidden_dim"] = c.hidden_dim;
  j["l2_reg"] = c.l2_reg;
  j["train"] = {{"max_epochs", c.train.max_epochs},
                {"step_size", c.train.step_size},
                {"tolerance", c.train.tolerance},
                {"seed", c.train.seed}};
  return j;
}

RewardModelConfig config_from_json(const json& j) {
  RewardModelConfig c;
  c.arch = arch_from_string(j.at("arch").get<std::string>());
  c.feature_dim = j.at("feature_dim").get<int>();
  c.hidden_dim = j.value("hidden_dim", 0);
  c.l2_reg = j.at("l2_reg").get<double>();
  const json& t = j.at("train");
  c.train.max_epochs = t.at("max_epochs").get<int>();
  c.train.step_size = t.at("step_size").get<double>();
  c.train.tolerance = t.at("tolerance").get<double>();
  c.train.seed = t.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

std::string serialize_model(const RewardModel& model) {
  json j;
  j["config"] = config_to_json(model.config);
  json blocks = json::array();
  for (const auto& b : model.params.blocks) {
    std::vector<double> vals(b.values.data(), b.values.data() + b.size());
    blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols},
                      {"values", vals}});
  }
  j["blocks"] = blocks;
  j["config_hash"] = fnv1a64(j["config"].dump());
  return j.dump();
}

RewardModel deserialize_model(const std::string& text) {
  json j = json::parse(text);
  RewardModel m;
  m.config = config_from_json(j.at("config"));
  for (const auto& bj : j.at("blocks")) {
    ParamBlock b;
    b.name = bj.at("name").get<std::string>();
    b.rows = bj.at("rows").get<int>();
    b.cols = bj.at("cols").get<int>();
    auto vals = bj.at("values").get<std::vector<double>>();
    if (static_cast<int>(vals.size()) != b.size())
      throw std::runtime_error("block '" + b.name + "' value count mismatch");
    b.values = Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
    m.params.blocks.push_back(std::move(b));
  }
  return m;
}

void save_model(const RewardModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << serialize_model(model) << "\n";
}

RewardModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_model(ss.str());
}

uint64_t fingerprint(const RewardModel& model) { return fnv1a64(serialize_model(model)); }

const char* to_string(Arch a) { return a == Arch::kLinear ? "linear" : "mlp1"; }

Arch arch_from_string(const std::string& s) {
  if (s == "linear") return Arch::kLinear;
  if (s == "mlp1") return Arch::kMlp1;
  throw std::invalid_argument("unknown arch: " + s);
}

}  // namespace prefinf
