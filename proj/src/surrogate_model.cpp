#include "dp2fl/surrogate_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "dp2fl/random.hpp"

namespace dp2fl {

namespace {

// Two class directions closer than this (cosine) count as the same direction.
constexpr double kMaxDirectionCosine = 0.99;
constexpr int kDirectionAttempts = 10000;

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = normal(rng) * scale;
  return m;
}

void append_bytes(std::vector<unsigned char>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  out.insert(out.end(), b, b + n);
}

// Cached per-call quantities of the forward pass.
struct TextFeatures {
  Matrix z;             // C × d_f
  std::vector<double> norms;
};

TextFeatures text_features(const Backbone& bb, const TaskPrompt& pt) {
  const auto& dims = bb.dims();
  require_size(pt.values.size(), static_cast<std::size_t>(dims.task_prompt), "task prompt");
  TextFeatures tf{Matrix(dims.classes, dims.feature), std::vector<double>(dims.classes)};
  for (int c = 0; c < dims.classes; ++c) {
    const Vector in = concat(bb.class_embeddings().row(c), pt.values);
    const Vector z = matvec(bb.text_encoder(), in);
    std::copy(z.begin(), z.end(), tf.z.row(c).begin());
    tf.norms[c] = norm2(z);
    if (!(tf.norms[c] > 0.0)) throw InvalidArgument("forward: zero-norm text feature");
  }
  return tf;
}

Vector image_feature(const Backbone& bb, std::span<const double> x, std::span<const double> pi) {
  require_size(x.size(), static_cast<std::size_t>(bb.dims().input), "feature vector");
  return matvec(bb.image_encoder(), concat(x, pi));
}

Vector logits_from(const Backbone& bb, const TextFeatures& tf, std::span<const double> v,
                   double v_norm) {
  if (!(v_norm > 0.0)) throw InvalidArgument("forward: zero-norm image feature");
  Vector logits(tf.z.rows());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    logits[c] = bb.logit_scale() * dot(v, tf.z.row(c)) / (v_norm * tf.norms[c]);
  }
  return logits;
}

// Softmax in place; returns log-sum-exp.
double softmax_inplace(Vector& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    sum += l;
  }
  for (double& l : logits) l /= sum;
  return mx + std::log(sum);
}

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

Batch gather(const Batch& src, std::span<const std::size_t> idx) {
  Batch out{Matrix(idx.size(), src.features.cols()), std::vector<int>(idx.size())};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto row = src.features.row(idx[i]);
    std::copy(row.begin(), row.end(), out.features.row(i).begin());
    out.labels[i] = src.labels[idx[i]];
  }
  return out;
}

}  // namespace

void ModelDims::validate() const {
  if (classes < 1 || input < 1 || embedding < 1 || task_prompt < 1 || image_prompt < 1 ||
      feature < 1) {
    throw InvalidArgument("model dims must all be >= 1");
  }
}

Backbone Backbone::build(std::uint64_t seed, const ModelDims& dims, double logit_scale) {
  dims.validate();
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) {
    throw InvalidArgument("logit_scale must be positive");
  }
  Rng rng(derive_seed(seed, {stream::kBackbone}));
  Backbone bb;
  bb.dims_ = dims;
  bb.seed_ = seed;
  bb.logit_scale_ = logit_scale;
  const std::size_t text_in = dims.embedding + dims.task_prompt;
  const std::size_t image_in = dims.input + dims.image_prompt;
  bb.text_encoder_ = random_matrix(rng, dims.feature, text_in, 1.0 / std::sqrt(double(text_in)));
  bb.image_encoder_ =
      random_matrix(rng, dims.feature, image_in, 1.0 / std::sqrt(double(image_in)));
  bb.class_embeddings_ = random_matrix(rng, dims.classes, dims.embedding, 1.0);

  // The "pretrained" image branch maps each concept direction onto the text
  // feature of its class name (at a zero task prompt); prompt columns stay random.
  const Matrix concepts = concept_directions(seed, dims.classes, dims.input);
  Matrix unit_text(dims.classes, dims.feature);
  for (int c = 0; c < dims.classes; ++c) {
    const Vector z = matvec(bb.text_encoder_,
                            concat(bb.class_embeddings_.row(c), Vector(dims.task_prompt, 0.0)));
    const double n = norm2(z);
    if (!(n > 0.0)) throw InvalidArgument("build: zero-norm class text feature");
    for (int f = 0; f < dims.feature; ++f) unit_text(c, f) = z[f] / n;
  }
  for (int f = 0; f < dims.feature; ++f) {
    for (int j = 0; j < dims.input; ++j) {
      double a = 0.0;
      for (int c = 0; c < dims.classes; ++c) a += unit_text(c, f) * concepts(c, j);
      bb.image_encoder_(f, j) = a;
    }
  }
  return bb;
}

Matrix concept_directions(std::uint64_t seed, int classes, int input_dim) {
  if (classes < 1 || input_dim < 1)
    throw InvalidArgument("concept_directions: need classes >= 1 and input_dim >= 1");
  Rng rng(derive_seed(seed, {stream::kTask}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix dirs(classes, input_dim);
  for (int c = 0; c < classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kDirectionAttempts && !placed; ++attempt) {
      Vector u(input_dim);
      for (double& v : u) v = normal(rng);
      const double n = norm2(u);
      if (n == 0.0) continue;
      for (double& v : u) v /= n;
      placed = true;
      for (int o = 0; o < c && placed; ++o) placed = dot(dirs.row(o), u) < kMaxDirectionCosine;
      if (placed) std::copy(u.begin(), u.end(), dirs.row(c).begin());
    }
    if (!placed) {
      throw InvalidArgument("cannot place " + std::to_string(classes) +
                            " distinct class directions in dimension " +
                            std::to_string(input_dim));
    }
  }
  return dirs;
}

Backbone Backbone::from_parts(const ModelDims& dims, Matrix text_encoder, Matrix image_encoder,
                              Matrix class_embeddings, double logit_scale) {
  dims.validate();
  if (!(logit_scale > 0.0)) throw InvalidArgument("logit_scale must be positive");
  require_size(text_encoder.rows(), dims.feature, "text_encoder rows");
  require_size(text_encoder.cols(), dims.embedding + dims.task_prompt, "text_encoder cols");
  require_size(image_encoder.rows(), dims.feature, "image_encoder rows");
  require_size(image_encoder.cols(), dims.input + dims.image_prompt, "image_encoder cols");
  require_size(class_embeddings.rows(), dims.classes, "class_embeddings rows");
  require_size(class_embeddings.cols(), dims.embedding, "class_embeddings cols");
  Backbone bb;
  bb.dims_ = dims;
  bb.logit_scale_ = logit_scale;
  bb.text_encoder_ = std::move(text_encoder);
  bb.image_encoder_ = std::move(image_encoder);
  bb.class_embeddings_ = std::move(class_embeddings);
  return bb;
}

std::vector<unsigned char> Backbone::serialize() const {
  std::vector<unsigned char> out;
  append_bytes(out, &dims_, sizeof(dims_));
  append_bytes(out, &seed_, sizeof(seed_));
  append_bytes(out, &logit_scale_, sizeof(logit_scale_));
  for (const Matrix* m : {&text_encoder_, &image_encoder_, &class_embeddings_}) {
    append_bytes(out, m->data().data(), m->data().size() * sizeof(double));
  }
  return out;
}

DataPrompt DataPrompt::zeros(const ModelDims& dims) {
  return {Matrix(dims.image_prompt, dims.task_prompt), Vector(dims.image_prompt, 0.0)};
}

Vector DataPrompt::flatten() const {
  return concat(map_weights.data(), map_bias);
}

DataPrompt DataPrompt::unflatten(std::span<const double> flat, const ModelDims& dims) {
  require_size(flat.size(), dims.data_prompt_size(), "data prompt");
  DataPrompt pd = zeros(dims);
  const std::size_t nw = pd.map_weights.data().size();
  std::copy(flat.begin(), flat.begin() + nw, pd.map_weights.data().begin());
  std::copy(flat.begin() + nw, flat.end(), pd.map_bias.begin());
  return pd;
}

void Batch::validate(const ModelDims& dims) const {
  require_size(features.rows(), labels.size(), "batch rows vs labels");
  if (!labels.empty()) require_size(features.cols(), dims.input, "batch feature width");
  for (int y : labels) {
    if (y < 0 || y >= dims.classes) {
      throw InvalidArgument("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(dims.classes) + ")");
    }
  }
}

Batch Batch::concat(const Batch& a, const Batch& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  require_size(b.features.cols(), a.features.cols(), "batch concat width");
  Batch out{Matrix(a.size() + b.size(), a.features.cols()), a.labels};
  std::copy(a.features.data().begin(), a.features.data().end(), out.features.data().begin());
  std::copy(b.features.data().begin(), b.features.data().end(),
            out.features.data().begin() + a.features.data().size());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

void TrainHyper::validate() const {
  if (!(learning_rate >= 0.0) || epochs < 1 || batch_size < 1) {
    throw InvalidArgument("train hyperparameters: learning_rate >= 0, epochs and batch_size >= 1");
  }
}

std::pair<TaskPrompt, DataPrompt> init_prompts(const ModelDims& dims, std::uint64_t seed,
                                               double scale) {
  Rng rng(derive_seed(seed, {stream::kPromptInit}));
  std::normal_distribution<double> normal(0.0, scale);
  TaskPrompt pt{Vector(dims.task_prompt)};
  for (double& v : pt.values) v = normal(rng);
  Vector flat(dims.data_prompt_size());
  for (double& v : flat) v = normal(rng);
  return {pt, DataPrompt::unflatten(flat, dims)};
}

Vector image_prompt(const TaskPrompt& pt, const DataPrompt& pd) {
  require_size(pt.values.size(), pd.map_weights.cols(), "image_prompt task prompt");
  require_size(pd.map_bias.size(), pd.map_weights.rows(), "image_prompt bias");
  Vector pi = matvec(pd.map_weights, pt.values);
  for (std::size_t i = 0; i < pi.size(); ++i) pi[i] += pd.map_bias[i];
  return pi;
}

Vector forward(const Backbone& bb, const TaskPrompt& pt, const DataPrompt& pd,
               std::span<const double> x) {
  const auto tf = text_features(bb, pt);
  const Vector v = image_feature(bb, x, image_prompt(pt, pd));
  return logits_from(bb, tf, v, norm2(v));
}

LossGrad loss_and_grad(const Backbone& bb, const TaskPrompt& pt, const DataPrompt& pd,
                       const Batch& batch) {
  const auto& dims = bb.dims();
  if (batch.empty()) throw InvalidArgument("loss_and_grad: empty batch");
  batch.validate(dims);
  require_size(pd.map_weights.rows(), dims.image_prompt, "data prompt rows");

  const auto tf = text_features(bb, pt);
  const Vector pi = image_prompt(pt, pd);
  const std::size_t C = dims.classes, F = dims.feature;
  const double scale = bb.logit_scale();
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  LossGrad out;
  Matrix grad_z(C, F);  // accumulated dL/dz_c
  Vector grad_v_total_pi(dims.image_prompt, 0.0);

  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Vector v = image_feature(bb, batch.features.row(s), pi);
    const double vn = norm2(v);
    Vector p = logits_from(bb, tf, v, vn);
    const Vector logits = p;
    const double lse = softmax_inplace(p);
    const int y = batch.labels[s];
    out.loss += (lse - logits[y]) * inv_n;

    Vector grad_v(F, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      // dL/dlogit_c, then chain through the cosine.
      const double g = (p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv_n * scale;
      if (g == 0.0) continue;
      const auto z = tf.z.row(c);
      const double zn = tf.norms[c];
      const double cs = logits[c] / scale;
      for (std::size_t f = 0; f < F; ++f) {
        grad_v[f] += g * (z[f] / (vn * zn) - cs * v[f] / (vn * vn));
        grad_z(c, f) += g * (v[f] / (vn * zn) - cs * z[f] / (zn * zn));
      }
    }
    // Only the prompt slice of the image input is trainable.
    const Vector grad_in = matvec_transposed(bb.image_encoder(), grad_v);
    for (int i = 0; i < dims.image_prompt; ++i) grad_v_total_pi[i] += grad_in[dims.input + i];
  }

  out.grad_pt.assign(dims.task_prompt, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const Vector grad_in = matvec_transposed(bb.text_encoder(), grad_z.row(c));
    for (int t = 0; t < dims.task_prompt; ++t) out.grad_pt[t] += grad_in[dims.embedding + t];
  }

  // pi = W·pt + b
  DataPrompt grad_pd = DataPrompt::zeros(dims);
  for (int i = 0; i < dims.image_prompt; ++i) {
    const double g = grad_v_total_pi[i];
    grad_pd.map_bias[i] = g;
    for (int t = 0; t < dims.task_prompt; ++t) {
      grad_pd.map_weights(i, t) = g * pt.values[t];
      out.grad_pt[t] += pd.map_weights(i, t) * g;
    }
  }
  out.grad_pd = grad_pd.flatten();
  return out;
}

std::pair<TaskPrompt, DataPrompt> train_local(const Backbone& bb, const TaskPrompt& pt,
                                              const DataPrompt& pd, const Batch& train,
                                              const TrainHyper& hyper,
                                              const ProximalTerm* proximal) {
  if (train.empty()) throw InvalidArgument("train_local: empty training split");
  hyper.validate();
  train.validate(bb.dims());
  if (proximal && proximal->mu < 0.0) throw InvalidArgument("proximal mu must be >= 0");

  TaskPrompt cur_pt = pt;
  Vector cur_pd = pd.flatten();
  Vector anchor_pd;
  if (proximal) anchor_pd = proximal->anchor_pd.flatten();

  Rng rng(hyper.shuffle_seed);
  std::vector<std::size_t> order(train.size());
  const std::size_t bs = static_cast<std::size_t>(hyper.batch_size);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      const Batch mb = gather(train, std::span(order).subspan(start, stop - start));
      LossGrad lg = loss_and_grad(bb, cur_pt, DataPrompt::unflatten(cur_pd, bb.dims()), mb);
      if (proximal && proximal->mu > 0.0) {
        for (std::size_t t = 0; t < lg.grad_pt.size(); ++t)
          lg.grad_pt[t] += proximal->mu * (cur_pt.values[t] - proximal->anchor_pt.values[t]);
        for (std::size_t d = 0; d < lg.grad_pd.size(); ++d)
          lg.grad_pd[d] += proximal->mu * (cur_pd[d] - anchor_pd[d]);
      }
      for (std::size_t t = 0; t < lg.grad_pt.size(); ++t)
        cur_pt.values[t] -= hyper.learning_rate * lg.grad_pt[t];
      for (std::size_t d = 0; d < lg.grad_pd.size(); ++d)
        cur_pd[d] -= hyper.learning_rate * lg.grad_pd[d];
    }
  }
  return {cur_pt, DataPrompt::unflatten(cur_pd, bb.dims())};
}

double eval_loss(const Backbone& bb, const TaskPrompt& pt, const DataPrompt& pd,
                 const Batch& split) {
  if (split.empty()) throw InvalidArgument("eval_loss: empty split");
  split.validate(bb.dims());
  const auto tf = text_features(bb, pt);
  const Vector pi = image_prompt(pt, pd);
  double total = 0.0;
  for (std::size_t s = 0; s < split.size(); ++s) {
    const Vector v = image_feature(bb, split.features.row(s), pi);
    Vector p = logits_from(bb, tf, v, norm2(v));
    const double target = p[split.labels[s]];
    total += softmax_inplace(p) - target;
  }
  return total / static_cast<double>(split.size());
}

std::vector<int> predict(const Backbone& bb, const TaskPrompt& pt, const DataPrompt& pd,
                         const Batch& split) {
  split.validate(bb.dims());
  const auto tf = text_features(bb, pt);
  const Vector pi = image_prompt(pt, pd);
  std::vector<int> out(split.size());
  for (std::size_t s = 0; s < split.size(); ++s) {
    const Vector v = image_feature(bb, split.features.row(s), pi);
    out[s] = argmax_lowest(logits_from(bb, tf, v, norm2(v)));
  }
  return out;
}

ClassificationMetrics eval_metrics(const Backbone& bb, const TaskPrompt& pt,
                                   const DataPrompt& pd, const Batch& split) {
  if (split.empty()) throw InvalidArgument("eval_metrics: empty split");
  const auto pred = predict(bb, pt, pd, split);
  return classification_metrics(split.labels, pred, bb.dims().classes);
}

ClassificationMetrics classification_metrics(std::span<const int> truth,
                                             std::span<const int> predicted, int classes) {
  require_size(predicted.size(), truth.size(), "predictions");
  if (truth.empty()) throw InvalidArgument("classification_metrics: empty input");
  std::vector<long> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  long correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || t >= classes || p < 0 || p >= classes)
      throw InvalidArgument("classification_metrics: class index out of range");
    if (t == p) {
      ++tp[t];
      ++correct;
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  ClassificationMetrics m;
  const double n = static_cast<double>(truth.size());
  m.accuracy = static_cast<double>(correct) / n;

  long sum_tp = 0, sum_fp = 0, sum_fn = 0;
  double macro = 0.0;
  int counted = 0;
  for (int c = 0; c < classes; ++c) {
    sum_tp += tp[c];
    sum_fp += fp[c];
    sum_fn += fn[c];
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    macro += 2.0 * tp[c] / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    ++counted;
  }
  // Single-label: sum_fp == sum_fn, so this reduces to correct / n.
  m.micro_f1 = 2.0 * sum_tp / static_cast<double>(2 * sum_tp + sum_fp + sum_fn);
  m.macro_f1 = counted ? macro / counted : 0.0;
  return m;
}

}  // namespace dp2fl
