#include "dp2fl/data_synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dp2fl/random.hpp"

namespace dp2fl {

namespace {

int round_count(double x) { return static_cast<int>(std::lround(x)); }

void append_samples(Batch& b, Rng& rng, const TaskSpec& task, int label, int count) {
  std::normal_distribution<double> noise(0.0, task.noise_sigma);
  const std::size_t d = task.class_means.cols();
  const std::size_t start = b.labels.size();
  Matrix grown(start + count, d);
  std::copy(b.features.data().begin(), b.features.data().end(), grown.data().begin());
  const auto mean = task.class_means.row(label);
  for (int s = 0; s < count; ++s) {
    auto row = grown.row(start + s);
    for (std::size_t j = 0; j < d; ++j) row[j] = mean[j] + noise(rng);
    b.labels.push_back(label);
  }
  b.features = std::move(grown);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InvalidArgument("dataset csv: bad number '" + s + "'");
  return v;
}

}  // namespace

void SamplerConfig::validate() const {
  auto frac_ok = [](double f) { return f >= 0.0 && f <= 1.0; };
  if (shot < 1 || !frac_ok(drop_frac) || !frac_ok(retain_frac) || !frac_ok(dominant_frac))
    throw ConfigError("sampler: shot >= 1 and fractions in [0, 1] required");
  if (val_per_class < 1 || test_per_class < 1 || val_per_class >= test_per_class)
    throw ConfigError("sampler: need 1 <= val_per_class < test_per_class");
  if (retained_shots() < 1 || dominant_shots() < 1)
    throw ConfigError("sampler: configuration yields 0 training samples per class");
}

int SamplerConfig::retained_shots() const { return round_count(shot * retain_frac); }

int SamplerConfig::dominant_shots() const {
  const int dom = round_count(shot * dominant_frac);
  return dominant_additive ? dom + retained_shots() : dom;
}

int SamplerConfig::dominant_test_count() const {
  if (!test_skewed) return test_per_class;
  return round_count(static_cast<double>(test_per_class) * dominant_shots() / retained_shots());
}

TaskSpec make_task(std::uint64_t seed, int classes, int input_dim, double mean_radius,
                   double noise_sigma) {
  if (classes < 2 || input_dim < 2) throw InvalidArgument("make_task: need C >= 2 and d_in >= 2");
  if (!(mean_radius >= 0.0) || !(noise_sigma > 0.0))
    throw InvalidArgument("make_task: mean_radius >= 0 and noise_sigma > 0 required");

  const Matrix dirs = concept_directions(seed, classes, input_dim);
  TaskSpec task;
  task.class_means = Matrix(classes, input_dim);
  for (int c = 0; c < classes; ++c)
    for (int j = 0; j < input_dim; ++j) task.class_means(c, j) = mean_radius * dirs(c, j);
  task.noise_sigma = noise_sigma;
  task.mean_radius = mean_radius;
  task.seed = seed;
  return task;
}

ClientDataset sample_client(const TaskSpec& task, std::uint64_t client_seed,
                            const SamplerConfig& cfg, int client_id) {
  cfg.validate();
  const int C = task.classes();
  const int dropped = round_count(C * cfg.drop_frac);
  if (static_cast<int>(std::floor(C * (1.0 - cfg.drop_frac))) < 2 || C - dropped < 2)
    throw ConfigError("sample_client: fewer than 2 classes would remain");

  Rng rng(client_seed);
  std::vector<int> classes(C);
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  std::vector<int> present(classes.begin() + dropped, classes.end());
  std::sort(present.begin(), present.end());

  std::uniform_int_distribution<std::size_t> pick(0, present.size() - 1);
  ClientDataset ds;
  ds.client_id = client_id;
  ds.present_classes = present;
  ds.dominant_class = present[pick(rng)];
  ds.train.features = Matrix(0, task.input_dim());
  ds.validation.features = Matrix(0, task.input_dim());
  ds.test.features = Matrix(0, task.input_dim());

  // Each split draws from the same stream after the previous one, so all
  // samples are fresh draws.
  for (int c : present) {
    const int n = c == ds.dominant_class ? cfg.dominant_shots() : cfg.retained_shots();
    append_samples(ds.train, rng, task, c, n);
  }
  for (int c : present) {
    append_samples(ds.validation, rng, task, c, cfg.val_per_class);
  }
  for (int c : present) {
    const int n = c == ds.dominant_class ? cfg.dominant_test_count() : cfg.test_per_class;
    append_samples(ds.test, rng, task, c, n);
  }
  return ds;
}

std::uint64_t client_data_seed(std::uint64_t base_seed, int client_id) {
  return derive_seed(base_seed, {stream::kClientData, static_cast<std::uint64_t>(client_id)});
}

std::vector<ClientDataset> make_federation_data(const TaskSpec& task, int num_clients,
                                                std::uint64_t base_seed,
                                                const SamplerConfig& cfg) {
  if (num_clients < 2) throw InvalidArgument("make_federation_data: need K >= 2");
  std::vector<ClientDataset> out;
  out.reserve(num_clients);
  for (int k = 0; k < num_clients; ++k)
    out.push_back(sample_client(task, client_data_seed(base_seed, k), cfg, k));
  return out;
}

ClientDataset make_new_client(const TaskSpec& task, std::uint64_t base_seed,
                              int existing_clients, const SamplerConfig& cfg) {
  return sample_client(task, client_data_seed(base_seed, existing_clients), cfg,
                       existing_clients);
}

void write_datasets_csv(std::ostream& os, const std::vector<ClientDataset>& clients,
                        const SamplerConfig& cfg) {
  const int d_in = clients.empty() ? 0 : static_cast<int>(clients.front().train.features.cols());
  os << "dp2fl-data v1\n";
  os << "clients=" << clients.size() << ",d_in=" << d_in << ",shot=" << cfg.shot
     << ",drop_frac=" << format_double(cfg.drop_frac)
     << ",retain_frac=" << format_double(cfg.retain_frac)
     << ",dominant_frac=" << format_double(cfg.dominant_frac)
     << ",val_per_class=" << cfg.val_per_class << ",test_per_class=" << cfg.test_per_class
     << ",dominant_additive=" << (cfg.dominant_additive ? 1 : 0)
     << ",test_skewed=" << (cfg.test_skewed ? 1 : 0) << "\n";
  os << "split,client_id,label";
  for (int j = 0; j < d_in; ++j) os << ",v" << j;
  os << "\n";
  for (const auto& c : clients) {
    const std::pair<const char*, const Batch*> splits[] = {
        {"train", &c.train}, {"validation", &c.validation}, {"test", &c.test}};
    for (const auto& [name, batch] : splits) {
      for (std::size_t s = 0; s < batch->size(); ++s) {
        os << name << ',' << c.client_id << ',' << batch->labels[s];
        for (double v : batch->features.row(s)) os << ',' << format_double(v);
        os << '\n';
      }
    }
  }
}

std::vector<ClientDataset> read_datasets_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "dp2fl-data v1")
    throw InvalidArgument("dataset csv: missing 'dp2fl-data v1' header");
  if (!std::getline(is, line)) throw InvalidArgument("dataset csv: missing config line");
  int d_in = -1;
  {
    std::stringstream ss(line);
    std::string kv;
    while (std::getline(ss, kv, ',')) {
      if (kv.rfind("d_in=", 0) == 0) d_in = std::stoi(kv.substr(5));
    }
  }
  if (d_in < 0) throw InvalidArgument("dataset csv: config line lacks d_in");
  if (!std::getline(is, line) || line.rfind("split,client_id,label", 0) != 0)
    throw InvalidArgument("dataset csv: missing column header");

  std::map<int, ClientDataset> by_id;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string split, field;
    std::getline(ss, split, ',');
    std::getline(ss, field, ',');
    const int id = std::stoi(field);
    std::getline(ss, field, ',');
    const int label = std::stoi(field);
    Vector row;
    while (std::getline(ss, field, ',')) row.push_back(parse_double(field));
    require_size(row.size(), d_in, "dataset csv row");

    auto& ds = by_id[id];
    ds.client_id = id;
    Batch* b = split == "train"        ? &ds.train
               : split == "validation" ? &ds.validation
               : split == "test"       ? &ds.test
                                       : nullptr;
    if (!b) throw InvalidArgument("dataset csv: unknown split '" + split + "'");
    Batch one{Matrix(1, d_in), {label}};
    std::copy(row.begin(), row.end(), one.features.row(0).begin());
    *b = Batch::concat(*b, one);
  }

  std::vector<ClientDataset> out;
  for (auto& [id, ds] : by_id) {
    std::map<int, int> counts;
    for (int y : ds.train.labels) ++counts[y];
    for (const auto& [label, n] : counts) ds.present_classes.push_back(label);
    ds.dominant_class = std::max_element(counts.begin(), counts.end(), [](auto& a, auto& b) {
                          return a.second < b.second;
                        })->first;
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace dp2fl
