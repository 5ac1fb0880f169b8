#include <cmath>

#include "doctest.h"
#include "dp2fl/random.hpp"
#include "dp2fl/surrogate_model.hpp"

using namespace dp2fl;

namespace {

ModelDims small_dims() {
  ModelDims d;
  d.classes = 4;
  d.input = 5;
  d.embedding = 3;
  d.task_prompt = 2;
  d.image_prompt = 2;
  d.feature = 6;
  return d;
}

Batch random_batch(Rng& rng, const ModelDims& d, int n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b{Matrix(n, d.input), {}};
  for (double& v : b.features.data()) v = normal(rng);
  for (int i = 0; i < n; ++i) b.labels.push_back(i % d.classes);
  return b;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (norm2(a) * norm2(b));
}

}  // namespace

TEST_CASE("backbone build is deterministic and seed dependent") {
  const ModelDims d = small_dims();
  CHECK(Backbone::build(7, d, 10.0) == Backbone::build(7, d, 10.0));
  CHECK_FALSE(Backbone::build(7, d, 10.0) == Backbone::build(8, d, 10.0));
  ModelDims bad = d;
  bad.feature = 0;
  CHECK_THROWS_AS(Backbone::build(7, bad, 10.0), InvalidArgument);
  CHECK_THROWS_AS(Backbone::build(7, d, 0.0), InvalidArgument);
}

TEST_CASE("concept directions are unit and separated") {
  const Matrix dirs = concept_directions(3, 10, 16);
  for (int c = 0; c < 10; ++c) {
    CHECK(norm2(dirs.row(c)) == doctest::Approx(1.0).epsilon(1e-12));
    for (int o = 0; o < c; ++o) CHECK(dot(dirs.row(c), dirs.row(o)) < 0.99);
  }
  CHECK_THROWS_AS(concept_directions(3, 3, 1), InvalidArgument);
}

TEST_CASE("image prompt is the affine map of the task prompt") {
  const ModelDims d = small_dims();
  DataPrompt pd = DataPrompt::zeros(d);
  CHECK(image_prompt(TaskPrompt{{1.0, 2.0}}, pd) == Vector{0.0, 0.0});
  pd.map_bias = {0.5, -1.0};
  CHECK(image_prompt(TaskPrompt{{3.0, -2.0}}, pd) == Vector{0.5, -1.0});

  pd.map_weights = Matrix::from_rows({{1, 2}, {3, 4}});
  const Vector pi = image_prompt(TaskPrompt{{1.0, -1.0}}, pd);
  CHECK(pi[0] == doctest::Approx(0.5 - 1.0));
  CHECK(pi[1] == doctest::Approx(-1.0 - 1.0));

  pd.map_bias = {0.0, 0.0};
  const TaskPrompt a{{0.3, -0.7}}, b{{1.1, 0.2}};
  const Vector lhs = image_prompt(TaskPrompt{{2 * 0.3 - 3 * 1.1, 2 * -0.7 - 3 * 0.2}}, pd);
  const Vector pa = image_prompt(a, pd), pb = image_prompt(b, pd);
  for (int i = 0; i < 2; ++i) CHECK(std::abs(lhs[i] - (2 * pa[i] - 3 * pb[i])) < 1e-12);
  CHECK_THROWS_AS(image_prompt(TaskPrompt{{1.0}}, pd), ShapeError);
}

TEST_CASE("data prompt flatten round trip") {
  const ModelDims d = small_dims();
  Vector flat(d.data_prompt_size());
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = double(i);
  const DataPrompt pd = DataPrompt::unflatten(flat, d);
  CHECK(pd.map_weights(1, 0) == 2.0);
  CHECK(pd.map_bias[0] == 4.0);
  CHECK(pd.flatten() == flat);
}

TEST_CASE("forward matches a scalar recomputation") {
  const ModelDims d = small_dims();
  const Backbone bb = Backbone::build(11, d, 10.0);
  Rng rng(1);
  auto [pt, pd] = init_prompts(d, 5, 0.5);
  const Batch b = random_batch(rng, d, 1);
  const Vector logits = forward(bb, pt, pd, b.features.row(0));
  const Vector pi = image_prompt(pt, pd);
  const Vector v = matvec(bb.image_encoder(), concat(b.features.row(0), pi));
  for (int c = 0; c < d.classes; ++c) {
    const Vector z = matvec(bb.text_encoder(), concat(bb.class_embeddings().row(c), pt.values));
    CHECK(logits[c] == doctest::Approx(10.0 * cosine(v, z)).epsilon(1e-12));
    CHECK(std::abs(logits[c]) <= 10.0);
  }
}

TEST_CASE("identical class features give ln C") {
  const ModelDims d = small_dims();
  const Backbone ref = Backbone::build(2, d, 10.0);
  Matrix emb(d.classes, d.embedding, 0.25);
  const Backbone bb =
      Backbone::from_parts(d, ref.text_encoder(), ref.image_encoder(), emb, 10.0);
  Rng rng(3);
  const Batch b = random_batch(rng, d, 6);
  auto [pt, pd] = init_prompts(d, 1, 0.1);
  CHECK(loss_and_grad(bb, pt, pd, b).loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(eval_loss(bb, pt, pd, b) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("gradients match central differences") {
  const ModelDims d = small_dims();
  const Backbone bb = Backbone::build(4, d, 10.0);
  Rng rng(9);
  auto [pt, pd] = init_prompts(d, 3, 0.7);
  const Batch b = random_batch(rng, d, 4);
  const LossGrad g = loss_and_grad(bb, pt, pd, b);
  constexpr double h = 1e-5;
  for (std::size_t i = 0; i < pt.values.size(); ++i) {
    TaskPrompt up = pt, dn = pt;
    up.values[i] += h;
    dn.values[i] -= h;
    const double num = (eval_loss(bb, up, pd, b) - eval_loss(bb, dn, pd, b)) / (2 * h);
    CHECK(g.grad_pt[i] == doctest::Approx(num).epsilon(1e-6));
  }
  const Vector flat = pd.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    Vector up = flat, dn = flat;
    up[i] += h;
    dn[i] -= h;
    const double num = (eval_loss(bb, pt, DataPrompt::unflatten(up, d), b) -
                        eval_loss(bb, pt, DataPrompt::unflatten(dn, d), b)) /
                       (2 * h);
    CHECK(g.grad_pd[i] == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("loss is a mean over samples") {
  const ModelDims d = small_dims();
  const Backbone bb = Backbone::build(4, d, 10.0);
  Rng rng(10);
  auto [pt, pd] = init_prompts(d, 3, 0.3);
  const Batch a = random_batch(rng, d, 3), b = random_batch(rng, d, 3);
  const LossGrad once = loss_and_grad(bb, pt, pd, a);
  const LossGrad twice = loss_and_grad(bb, pt, pd, Batch::concat(a, a));
  CHECK(twice.loss == doctest::Approx(once.loss).epsilon(1e-14));
  for (std::size_t i = 0; i < once.grad_pd.size(); ++i)
    CHECK(twice.grad_pd[i] == doctest::Approx(once.grad_pd[i]).epsilon(1e-12));
  CHECK(eval_loss(bb, pt, pd, Batch::concat(a, b)) ==
        doctest::Approx((eval_loss(bb, pt, pd, a) + eval_loss(bb, pt, pd, b)) / 2).epsilon(1e-14));

  Batch one{Matrix(1, d.input), {a.labels[0]}};
  std::copy(a.features.row(0).begin(), a.features.row(0).end(), one.features.row(0).begin());
  CHECK(eval_loss(bb, pt, pd, one) == loss_and_grad(bb, pt, pd, one).loss);

  Batch bad = a;
  bad.labels[0] = 99;
  CHECK_THROWS(loss_and_grad(bb, pt, pd, bad));
  CHECK_THROWS(eval_loss(bb, pt, pd, Batch{Matrix(0, d.input), {}}));
}

TEST_CASE("train_local contracts") {
  const ModelDims d = small_dims();
  const Backbone bb = Backbone::build(4, d, 10.0);
  const auto frozen = bb.serialize();
  Rng rng(12);
  auto [pt, pd] = init_prompts(d, 3, 0.3);
  const Batch train = random_batch(rng, d, 7);

  TrainHyper h;
  h.learning_rate = 0.0;
  auto [pt0, pd0] = train_local(bb, pt, pd, train, h);
  CHECK(pt0.values == pt.values);
  CHECK(pd0.flatten() == pd.flatten());

  h.learning_rate = 0.1;
  h.epochs = 1;
  h.batch_size = 16;
  auto [pt1, pd1] = train_local(bb, pt, pd, train, h);
  const LossGrad g = loss_and_grad(bb, pt, pd, train);
  for (std::size_t i = 0; i < pt.values.size(); ++i)
    CHECK(pt1.values[i] == doctest::Approx(pt.values[i] - 0.1 * g.grad_pt[i]).epsilon(1e-14));
  const Vector flat = pd.flatten(), flat1 = pd1.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i)
    CHECK(flat1[i] == doctest::Approx(flat[i] - 0.1 * g.grad_pd[i]).epsilon(1e-14));

  h = TrainHyper{};
  h.shuffle_seed = 42;
  auto [ptA, pdA] = train_local(bb, pt, pd, train, h);
  auto [ptB, pdB] = train_local(bb, pt, pd, train, h);
  CHECK(ptA.values == ptB.values);
  CHECK(pdA.flatten() == pdB.flatten());
  CHECK(bb.serialize() == frozen);
  CHECK(eval_loss(bb, ptA, pdA, train) < eval_loss(bb, pt, pd, train));

  CHECK_THROWS(train_local(bb, pt, pd, Batch{Matrix(0, d.input), {}}, h));
}

TEST_CASE("classification metrics") {
  const std::vector<int> truth{0, 0, 0, 0, 1, 1, 1, 1, 2, 2};
  const std::vector<int> pred{0, 0, 0, 1, 1, 1, 2, 2, 2, 0};
  const auto m = classification_metrics(truth, pred, 4);
  CHECK(m.accuracy == 0.6);
  CHECK(m.micro_f1 == m.accuracy);
  CHECK(m.macro_f1 == doctest::Approx((0.75 + 4.0 / 7.0 + 0.4) / 3.0).epsilon(1e-15));

  const auto perfect = classification_metrics(truth, truth, 4);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.micro_f1 == 1.0);
  CHECK(perfect.macro_f1 == 1.0);

  // Class 1 never occurs but is predicted: it counts with F1 = 0.
  const auto m2 = classification_metrics(std::vector<int>{0, 0}, std::vector<int>{0, 1}, 3);
  CHECK(m2.macro_f1 == doctest::Approx((2.0 / 3.0 + 0.0) / 2.0));
}

TEST_CASE("argmax ties go to the lowest class") {
  const ModelDims d = small_dims();
  const Backbone ref = Backbone::build(2, d, 10.0);
  const Backbone bb = Backbone::from_parts(d, ref.text_encoder(), ref.image_encoder(),
                                           Matrix(d.classes, d.embedding, 1.0), 10.0);
  Rng rng(3);
  auto [pt, pd] = init_prompts(d, 1, 0.1);
  for (int y : predict(bb, pt, pd, random_batch(rng, d, 5))) CHECK(y == 0);
}
