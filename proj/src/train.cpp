#include "vrw/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numbers>
#include <thread>

#include "vrw/autodiff.hpp"
#include "vrw/errors.hpp"
#include "vrw/rng.hpp"

namespace vrw {

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    throw ValidationError("train: learning_rate must be > 0");
  }
  if (!(c.cue_learning_rate >= 0.0) || !std::isfinite(c.cue_learning_rate)) {
    throw ValidationError("train: cue_learning_rate must be >= 0");
  }
  if (c.steps < 1) throw ValidationError("train: steps must be >= 1");
  if (c.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0) || !(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) {
    throw ValidationError("train: Adam betas must be in [0, 1)");
  }
  if (!(c.adam_eps > 0.0)) throw ValidationError("train: adam_eps must be > 0");
  if (c.threads < 1) throw ValidationError("train: threads must be >= 1");
}

void validate(const PredictorConfig& c) {
  if (c.hidden < 0) throw ValidationError("predictor: hidden must be >= 0");
  if (!(c.init_scale >= 0.0)) throw ValidationError("predictor: init_scale must be >= 0");
}

TrainingInstance prepare_instance(std::string name, const Image& image, SparseLabels labels,
                                  const VesselnessConfig& vesselness, Connectivity connectivity) {
  TrainingInstance inst;
  inst.name = std::move(name);
  inst.grid = PixelGrid(image.width, image.height, connectivity);
  validate_labels(inst.grid, labels);
  inst.features = compute_features(image, vesselness, &inst.orientation);
  inst.labels = std::move(labels);
  return inst;
}

ModelState initial_state(int channels, int num_labels, const PredictorConfig& predictor, std::uint64_t seed,
                         const TransitionParams& transition) {
  validate(predictor);
  validate(transition);
  ModelState s;
  s.predictor = PredictorParams::random(channels, num_labels, predictor.hidden, predictor.smoothing, seed,
                                        predictor.init_scale);
  s.cues = CueParams::classical(channels);
  s.transition = transition;
  return s;
}

CueMaps model_cues(const TrainingInstance& inst, const ModelState& state, const Ablation& ablation) {
  if (ablation.constant_vesselness) {
    CueMaps c = cue_head_forward(inst.features, state.cues);
    std::fill(c.vesselness.data.begin(), c.vesselness.data.end(), 1.0);
    return c;
  }
  return cue_head_forward(inst.features, state.cues, inst.orientation);
}

TransitionParams model_transition(const ModelState& state, const Ablation& ablation) {
  TransitionParams t = state.transition;
  if (ablation.constant_vesselness) t.use_orientation = false;
  return t;
}

LossConfig ablated_loss(const LossConfig& loss, const Ablation& ablation) {
  LossConfig l = loss;
  if (ablation.gamma_zero) l.gamma = 0.0;
  if (ablation.alpha_zero) l.alpha = 0.0;
  return l;
}

PropagatedField model_propagate(const TrainingInstance& inst, const ModelState& state, const Ablation& ablation,
                                const SolverConfig& solver) {
  return propagate(inst.grid, model_cues(inst, state, ablation), model_transition(state, ablation), inst.labels,
                   solver);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point& t, bool record) {
  if (!record) return 0.0;
  const auto now = Clock::now();
  const double s = std::chrono::duration<double>(now - t).count();
  t = now;
  return s;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

StepGradients compute_gradients(const TrainingInstance& inst, const ModelState& state, const LossConfig& loss,
                                 const SolverConfig& solver, const Ablation& ablation, bool record_timing) {
  StepGradients out;
  auto t = Clock::now();
  const CueMaps cues = model_cues(inst, state, ablation);
  const TransitionParams tp = model_transition(state, ablation);
  out.seconds_cues = seconds_since(t, record_timing);

  const auto transitions = build_transition_matrix(inst.grid, cues, tp, inst.labels);
  const auto system = assemble_system(transitions, inst.labels);
  const auto forward = solve_system(system, inst.grid, solver);
  out.degenerate_rows = transitions.degenerate_rows;
  for (const auto& s : forward.stats) out.solver_iterations += s.iterations;
  out.seconds_solve = seconds_since(t, record_timing);

  const auto logits = predict_logits(inst.features, state.predictor);
  const auto obj = total_objective(forward.field, logits, inst.labels, ablated_loss(loss, ablation));
  out.loss = obj.loss;
  out.seconds_objective = seconds_since(t, record_timing);

  out.predictor = predict_backward(inst.features, state.predictor, obj.grad_logits).flatten();
  if (ablation.freeze_cues) {
    out.cues.assign(state.cues.flat_size(), 0.0);
  } else {
    const auto gz = grad_P_to_Z(forward.field, obj.grad_p);
    const auto adj = solve_adjoints(system, forward, gz);
    for (const auto& s : adj.stats) out.solver_iterations += s.iterations;
    GradientBundle bundle = grad_transitions(transitions, system, forward, adj, cues, tp);
    if (ablation.constant_vesselness) {
      std::fill(bundle.vesselness.begin(), bundle.vesselness.end(), 0.0);
      bundle.mu = 0.0;
    }
    backprop_cue_head(bundle, inst.features, state.cues);
    out.cues = bundle.cue_params.flatten();
    out.lambda = bundle.lambda;
    out.mu = bundle.mu;
  }
  out.seconds_backward = seconds_since(t, record_timing);
  return out;
}

bool same_trajectory(const StepRecord& a, const StepRecord& b) {
  return a.step == b.step && a.learning_rate == b.learning_rate && a.loss.weighted_kl == b.loss.weighted_kl &&
         a.loss.entropy_term == b.loss.entropy_term && a.loss.r_skel == b.loss.r_skel &&
         a.loss.r_geo == b.loss.r_geo && a.loss.total == b.loss.total &&
         a.grad_norm_predictor == b.grad_norm_predictor && a.grad_norm_cues == b.grad_norm_cues &&
         a.grad_norm_transition == b.grad_norm_transition && a.solver_iterations == b.solver_iterations &&
         a.degenerate_rows == b.degenerate_rows;
}

Trainer::Trainer(ModelState initial, TrainConfig train, LossConfig loss, SolverConfig solver)
    : state_(std::move(initial)), train_(train), loss_(loss), solver_(solver) {
  if (!(train_.learning_rate >= 0.0) || !(train_.cue_learning_rate >= 0.0)) {
    throw ValidationError("train: learning rates must be >= 0");
  }
  TrainConfig probe = train_;
  probe.learning_rate = 1.0;  // zero is allowed here, unlike in config files
  validate(probe);
  validate(loss_);
  validate(state_.predictor);
  validate(state_.transition);
}

double Trainer::current_learning_rate() const {
  if (!train_.cosine_decay) return train_.learning_rate;
  const double frac = std::min(1.0, double(step_) / train_.steps);
  return train_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

StepRecord Trainer::step(std::span<const TrainingInstance* const> batch) {
  if (batch.empty()) throw ArgumentError("Trainer::step: empty batch");
  const bool timing = train_.record_timing;
  std::vector<StepGradients> grads(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto work = [&](std::size_t i) {
    try {
      grads[i] = compute_gradients(*batch[i], state_, loss_, solver_, train_.ablation, timing);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int threads = std::min<int>(train_.threads, int(batch.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) {
      pool.emplace_back([&, k] {
        for (std::size_t i = k; i < batch.size(); i += threads) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!errors[i]) continue;
    const std::string where = "step " + std::to_string(step_) + ", image '" + batch[i]->name + "': ";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const SolverError& e) {
      throw SolverError(where + e.what(), e.residual(), e.iterations());
    }
  }

  // deterministic reduction in batch order
  const double inv = 1.0 / double(batch.size());
  StepRecord rec;
  rec.step = step_;
  std::vector<double> gp(grads[0].predictor.size(), 0.0), gc(grads[0].cues.size(), 0.0);
  double gl = 0.0, gm = 0.0;
  for (const auto& g : grads) {
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g.predictor[i] * inv;
    for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += g.cues[i] * inv;
    gl += g.lambda * inv;
    gm += g.mu * inv;
    rec.loss.weighted_kl += g.loss.weighted_kl * inv;
    rec.loss.entropy_term += g.loss.entropy_term * inv;
    rec.loss.r_skel += g.loss.r_skel * inv;
    rec.loss.r_geo += g.loss.r_geo * inv;
    rec.loss.total += g.loss.total * inv;
    rec.solver_iterations += g.solver_iterations;
    rec.degenerate_rows += g.degenerate_rows;
    rec.seconds_cues += g.seconds_cues;
    rec.seconds_solve += g.seconds_solve;
    rec.seconds_objective += g.seconds_objective;
    rec.seconds_backward += g.seconds_backward;
  }
  const bool update_cues = !train_.ablation.freeze_cues;
  const bool update_transition = update_cues && train_.learn_transition;
  if (!update_cues) std::fill(gc.begin(), gc.end(), 0.0);
  if (!update_transition) gl = gm = 0.0;
  rec.grad_norm_predictor = norm2(gp);
  rec.grad_norm_cues = norm2(gc);
  rec.grad_norm_transition = std::hypot(gl, gm);

  auto t = Clock::now();
  const double lr = current_learning_rate();
  const double scale = train_.learning_rate > 0.0 ? lr / train_.learning_rate : 0.0;
  const double lr_cue = (train_.cue_learning_rate > 0.0 ? train_.cue_learning_rate : train_.learning_rate) * scale;
  rec.learning_rate = lr;

  auto theta_p = state_.predictor.flatten();
  auto theta_c = state_.cues.flatten();
  const std::size_t np = theta_p.size(), nc = theta_c.size();
  if (train_.optimizer == Optimizer::Adam && opt_.m.empty()) {
    opt_.m.assign(np + nc + 2, 0.0);
    opt_.v.assign(np + nc + 2, 0.0);
  }
  ++opt_.t;
  auto update = [&](double& theta, double g, std::size_t slot, double rate) {
    if (train_.optimizer == Optimizer::SGD) {
      theta -= rate * g;
      return;
    }
    const double b1 = train_.adam_beta1, b2 = train_.adam_beta2;
    opt_.m[slot] = b1 * opt_.m[slot] + (1.0 - b1) * g;
    opt_.v[slot] = b2 * opt_.v[slot] + (1.0 - b2) * g * g;
    const double mhat = opt_.m[slot] / (1.0 - std::pow(b1, double(opt_.t)));
    const double vhat = opt_.v[slot] / (1.0 - std::pow(b2, double(opt_.t)));
    theta -= rate * mhat / (std::sqrt(vhat) + train_.adam_eps);
  };
  for (std::size_t i = 0; i < np; ++i) update(theta_p[i], gp[i], i, lr);
  state_.predictor.unflatten(theta_p);
  if (update_cues) {
    for (std::size_t i = 0; i < nc; ++i) update(theta_c[i], gc[i], np + i, lr_cue);
    state_.cues.unflatten(theta_c);
  }
  if (update_transition) {
    update(state_.transition.lambda, gl, np + nc, lr_cue);
    update(state_.transition.mu, gm, np + nc + 1, lr_cue);
    state_.transition.lambda = std::max(0.0, state_.transition.lambda);
    state_.transition.mu = std::clamp(state_.transition.mu, 0.0, 1.0);
  }
  rec.seconds_update = seconds_since(t, timing);
  ++step_;
  return rec;
}

FitResult fit(std::span<const TrainingInstance> dataset, ModelState initial, const TrainConfig& train,
              const LossConfig& loss, const SolverConfig& solver,
              const std::function<void(const StepRecord&, const ModelState&)>& on_step) {
  if (dataset.empty()) throw ArgumentError("fit: empty dataset");
  Trainer trainer(std::move(initial), train, loss, solver);
  Rng rng(train.seed);
  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();
  FitResult result;
  std::vector<const TrainingInstance*> batch;
  for (int s = 0; s < train.steps; ++s) {
    batch.clear();
    for (int b = 0; b < train.batch_size; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(int(i))]);
        cursor = 0;
      }
      batch.push_back(&dataset[order[cursor++]]);
    }
    result.log.steps.push_back(trainer.step(batch));
    if (on_step) on_step(result.log.steps.back(), trainer.state());
  }
  result.state = trainer.state();
  return result;
}

std::vector<double> predict_vessel(const TrainingInstance& inst, const PredictorParams& params, int vessel_label) {
  const auto q = predict(inst.features, params);
  const int L = params.num_labels;
  if (vessel_label < 0 || vessel_label >= L) throw ArgumentError("predict_vessel: bad vessel label");
  std::vector<double> out(inst.features.size());
  for (std::size_t x = 0; x < out.size(); ++x) out[x] = q[x * L + vessel_label];
  return out;
}

}  // namespace vrw
