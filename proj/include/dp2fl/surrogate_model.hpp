#pragma once

// Frozen two-branch encoder with trainable task/data prompts.
//
// Text branch:  z_c = text_encoder · [class_embedding_c ; pt]
// Image branch: v   = image_encoder · [x ; image_prompt(pt, pd)]
// Head:         logit_c = logit_scale · cos(v, z_c)
//
// The data prompt parameterizes the affine map from task prompt to image
// prompt, so each client personalizes how the shared task prompt reaches the
// image branch.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dp2fl/tensor.hpp"

namespace dp2fl {

struct ModelDims {
  int classes = 10;    // C
  int input = 16;      // d_in
  int embedding = 8;   // d_e
  int task_prompt = 4; // d_t
  int image_prompt = 4;// d_i
  int feature = 16;    // d_f

  /// Flattened data prompt length d_i·d_t + d_i.
  std::size_t data_prompt_size() const {
    return static_cast<std::size_t>(image_prompt) * task_prompt + image_prompt;
  }
  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// C unit vectors in R^d_in with pairwise cosine below 0.99, drawn from the
/// task stream of `seed`. Shared by the backbone and the task generator.
Matrix concept_directions(std::uint64_t seed, int classes, int input_dim);

class Backbone {
 public:
  /// Throws InvalidArgument on non-positive dims or logit_scale.
  static Backbone build(std::uint64_t seed, const ModelDims& dims, double logit_scale);

  const ModelDims& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }
  double logit_scale() const { return logit_scale_; }
  const Matrix& text_encoder() const { return text_encoder_; }    // d_f × (d_e + d_t)
  const Matrix& image_encoder() const { return image_encoder_; }  // d_f × (d_in + d_i)
  const Matrix& class_embeddings() const { return class_embeddings_; }  // C × d_e

  /// Raw bytes of every field, for frozenness checks.
  std::vector<unsigned char> serialize() const;

  /// Test-only: backbone with caller-provided weights.
  static Backbone from_parts(const ModelDims& dims, Matrix text_encoder, Matrix image_encoder,
                             Matrix class_embeddings, double logit_scale);

  friend bool operator==(const Backbone&, const Backbone&) = default;

 private:
  Backbone() = default;
  ModelDims dims_;
  std::uint64_t seed_ = 0;
  double logit_scale_ = 10.0;
  Matrix text_encoder_;
  Matrix image_encoder_;
  Matrix class_embeddings_;
};

struct TaskPrompt {
  Vector values;
  friend bool operator==(const TaskPrompt&, const TaskPrompt&) = default;
};

/// Parameters of the affine map F(pt) = map_weights·pt + map_bias.
struct DataPrompt {
  Matrix map_weights;  // d_i × d_t
  Vector map_bias;     // d_i

  static DataPrompt zeros(const ModelDims& dims);
  /// Layout: map_weights row-major, then map_bias.
  Vector flatten() const;
  static DataPrompt unflatten(std::span<const double> flat, const ModelDims& dims);

  friend bool operator==(const DataPrompt&, const DataPrompt&) = default;
};

struct Batch {
  Matrix features;          // n × d_in
  std::vector<int> labels;  // n

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  void validate(const ModelDims& dims) const;
  static Batch concat(const Batch& a, const Batch& b);

  friend bool operator==(const Batch&, const Batch&) = default;
};

struct TrainHyper {
  double learning_rate = 0.035;
  int epochs = 5;
  int batch_size = 4;
  std::uint64_t shuffle_seed = 0;
  void validate() const;
};

/// Optional FedProx-style penalty (mu/2)·‖θ − anchor‖² over θ = [pt ; flat(pd)].
struct ProximalTerm {
  double mu = 0.0;
  TaskPrompt anchor_pt;
  DataPrompt anchor_pd;
};

struct LossGrad {
  double loss = 0.0;
  Vector grad_pt;  // d_t
  Vector grad_pd;  // flattened, d_d
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
};

/// Draws pt and pd entries i.i.d. N(0, scale²).
std::pair<TaskPrompt, DataPrompt> init_prompts(const ModelDims& dims, std::uint64_t seed,
                                               double scale = 0.02);

Vector image_prompt(const TaskPrompt& pt, const DataPrompt& pd);

Vector forward(const Backbone& bb, const TaskPrompt& pt, const DataPrompt& pd,
               std::span<const double> x);

/// Mean cross-entropy over the batch and its exact gradient.
LossGrad loss_and_grad(const Backbone& bb, const TaskPrompt& pt, const DataPrompt& pd,
                       const Batch& batch);

std::pair<TaskPrompt, DataPrompt> train_local(const Backbone& bb, const TaskPrompt& pt,
                                              const DataPrompt& pd, const Batch& train,
                                              const TrainHyper& hyper,
                                              const ProximalTerm* proximal = nullptr);

double eval_loss(const Backbone& bb, const TaskPrompt& pt, const DataPrompt& pd,
                 const Batch& split);

std::vector<int> predict(const Backbone& bb, const TaskPrompt& pt, const DataPrompt& pd,
                         const Batch& split);

ClassificationMetrics eval_metrics(const Backbone& bb, const TaskPrompt& pt,
                                   const DataPrompt& pd, const Batch& split);

/// Metrics from label/prediction lists. Classes absent from both truth and
/// prediction are left out of the macro average.
ClassificationMetrics classification_metrics(std::span<const int> truth,
                                             std::span<const int> predicted, int classes);

}  // namespace dp2fl
