#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vrw/cues.hpp"
#include "vrw/grid.hpp"
#include "vrw/objective.hpp"
#include "vrw/predictor.hpp"
#include "vrw/propagate.hpp"
#include "vrw/solver.hpp"

namespace vrw {

enum class Optimizer { SGD, Adam };

struct Ablation {
  bool freeze_cues = false;          // cue head, lambda and mu stay at their initial values
  bool gamma_zero = false;           // topology terms off
  bool alpha_zero = false;           // uncertainty weights w = 1
  bool constant_vesselness = false;  // V = 1 and no orientation term

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct PredictorConfig {
  int hidden = 0;  // 0 or the width of the tanh layer
  bool smoothing = false;
  double init_scale = 1.0;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  double cue_learning_rate = 0.0;  // 0: same as learning_rate (cue head, lambda, mu)
  int steps = 200;
  int batch_size = 1;
  Optimizer optimizer = Optimizer::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool cosine_decay = false;
  bool learn_transition = true;  // also update lambda and mu
  Ablation ablation;
  std::uint64_t seed = 0;
  int threads = 1;               // images of a batch processed in parallel
  bool record_timing = true;
};

void validate(const TrainConfig& config);
void validate(const PredictorConfig& config);

// Everything the step needs that does not change during training.
struct TrainingInstance {
  std::string name;
  PixelGrid grid{1, 1};
  FeatureStack features;
  Image orientation;
  SparseLabels labels;
};

TrainingInstance prepare_instance(std::string name, const Image& image, SparseLabels labels,
                                  const VesselnessConfig& vesselness = {},
                                  Connectivity connectivity = Connectivity::Four);

struct ModelState {
  PredictorParams predictor;
  CueParams cues;
  TransitionParams transition;
};

ModelState initial_state(int channels, int num_labels, const PredictorConfig& predictor, std::uint64_t seed,
                         const TransitionParams& transition = {});

// Cue maps as the model sees them, with the constant-vesselness ablation applied.
CueMaps model_cues(const TrainingInstance& instance, const ModelState& state, const Ablation& ablation);
TransitionParams model_transition(const ModelState& state, const Ablation& ablation);
LossConfig ablated_loss(const LossConfig& loss, const Ablation& ablation);

// Propagated labels of an instance under the current model.
PropagatedField model_propagate(const TrainingInstance& instance, const ModelState& state, const Ablation& ablation,
                                const SolverConfig& solver = {});

struct StepGradients {
  LossBreakdown loss;
  std::vector<double> predictor;  // flattened PredictorParams
  std::vector<double> cues;       // flattened CueParams
  double lambda = 0.0;
  double mu = 0.0;
  int solver_iterations = 0;
  int degenerate_rows = 0;
  double seconds_cues = 0.0, seconds_solve = 0.0, seconds_objective = 0.0, seconds_backward = 0.0;
};

// Forward and backward for one image: (i) cues, (ii) transitions and solve,
// (iii) objective, then adjoints back to every parameter group.
StepGradients compute_gradients(const TrainingInstance& instance, const ModelState& state, const LossConfig& loss,
                                 const SolverConfig& solver, const Ablation& ablation, bool record_timing = true);

struct StepRecord {
  int step = 0;
  double learning_rate = 0.0;
  LossBreakdown loss;  // mean over the batch
  double grad_norm_predictor = 0.0;
  double grad_norm_cues = 0.0;
  double grad_norm_transition = 0.0;
  int solver_iterations = 0;
  int degenerate_rows = 0;
  double seconds_cues = 0.0, seconds_solve = 0.0, seconds_objective = 0.0, seconds_backward = 0.0,
         seconds_update = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
};

// Everything in a record except wall times.
bool same_trajectory(const StepRecord& a, const StepRecord& b);

// Adam moments (or nothing for SGD) over the concatenated parameter vector.
struct OptimizerState {
  std::vector<double> m, v;
  long t = 0;
};

class Trainer {
 public:
  Trainer(ModelState initial, TrainConfig train, LossConfig loss = {}, SolverConfig solver = {});

  // One update from the images in `batch`; gradients are averaged in batch order.
  StepRecord step(std::span<const TrainingInstance* const> batch);

  const ModelState& state() const { return state_; }
  const TrainConfig& config() const { return train_; }
  const LossConfig& loss_config() const { return loss_; }
  const SolverConfig& solver_config() const { return solver_; }
  int steps_taken() const { return step_; }
  double current_learning_rate() const;

 private:
  ModelState state_;
  TrainConfig train_;
  LossConfig loss_;
  SolverConfig solver_;
  OptimizerState opt_;
  int step_ = 0;
};

struct FitResult {
  ModelState state;
  TrainLog log;
};

// Minibatch loop over a dataset reshuffled each epoch from config.seed. `on_step` is
// called after every step.
FitResult fit(std::span<const TrainingInstance> dataset, ModelState initial, const TrainConfig& train,
              const LossConfig& loss = {}, const SolverConfig& solver = {},
              const std::function<void(const StepRecord&, const ModelState&)>& on_step = {});

// Predictor vessel probability for an instance.
std::vector<double> predict_vessel(const TrainingInstance& instance, const PredictorParams& params,
                                   int vessel_label = 1);

}  // namespace vrw
