#include "madm/sampler.hpp"

#include <algorithm>
#include <random>

#include "madm/error.hpp"
#include "madm/parallel.hpp"
#include "madm/rng.hpp"
#include "madm/store.hpp"

namespace madm {

std::string_view to_string(SamplerMode mode) {
  return mode == SamplerMode::kAveraging ? "averaging" : "sequential";
}

SamplerMode parse_sampler_mode(std::string_view name) {
  if (name == "averaging") return SamplerMode::kAveraging;
  if (name == "sequential") return SamplerMode::kSequential;
  throw ConfigError("mode", "unknown sampler mode '" + std::string(name) + "'");
}

void SamplerConfig::validate(int steps) const {
  if (t_s < 0 || t_s > steps) {
    throw ConfigError("t_s", "start timestep " + std::to_string(t_s) + " outside [0, " + std::to_string(steps) + "]");
  }
  if (!use_prior && t_s != steps) {
    throw ConfigError("t_s", "a chain without the prior starts at t = T = " + std::to_string(steps));
  }
  if (views.empty()) throw ConfigError("views", "at least one view is required");
  auto sorted = views;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("views", "views must not repeat");
  }
  if (!order.empty()) {
    auto o = order;
    std::sort(o.begin(), o.end());
    if (o != sorted) throw ConfigError("order", "sequential order must be a permutation of the views");
  }
  if (slice_batch == 0) throw ConfigError("slice_batch", "must be positive");
  if (workers == 0) throw ConfigError("workers", "must be positive");
}

nlohmann::json SamplerConfig::to_json() const {
  auto names = [](const std::vector<ViewAxis>& vs) {
    std::vector<std::string> out;
    for (auto v : vs) out.emplace_back(to_string(v));
    return out;
  };
  return {{"t_s", t_s},
          {"views", names(views)},
          {"mode", std::string(to_string(mode))},
          {"order", names(order)},
          {"seed", seed},
          {"use_prior", use_prior},
          {"slice_batch", slice_batch},
          {"workers", workers}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  auto axes = [](const nlohmann::json& a) {
    std::vector<ViewAxis> out;
    for (const auto& v : a) out.push_back(parse_view_axis(v.get<std::string>()));
    return out;
  };
  SamplerConfig c;
  c.t_s = j.value("t_s", c.t_s);
  if (j.contains("views")) c.views = axes(j.at("views"));
  if (j.contains("mode")) c.mode = parse_sampler_mode(j.at("mode").get<std::string>());
  if (j.contains("order")) c.order = axes(j.at("order"));
  c.seed = j.value("seed", c.seed);
  c.use_prior = j.value("use_prior", c.use_prior);
  c.slice_batch = j.value("slice_batch", c.slice_batch);
  c.workers = j.value("workers", c.workers);
  return c;
}

namespace {

constexpr std::uint64_t kStartKey = 0x7374617274ULL;
constexpr std::uint64_t kStepKey = 0x73746570ULL;

void fill_normal(std::uint64_t seed, std::initializer_list<std::uint64_t> keys, std::span<float> out) {
  Rng rng = make_rng(seed, keys);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (auto& v : out) v = dist(rng);
}

std::pair<double, double> output_range(const Volume& x, const ViewModelSet& models) {
  const nlohmann::json* n = nullptr;
  if (auto it = x.meta().find("normalization"); it != x.meta().end()) {
    n = &*it;
  } else if (models.normalization.is_object() && models.normalization.contains("hi")) {
    n = &models.normalization;
  }
  if (!n) throw RangeError("sampler: neither the input nor the models carry a normalization range");
  return {n->at("lo").get<double>(), n->at("hi").get<double>()};
}

void denormalize_in_place(Volume& v, double lo, double hi) {
  const double scale = (hi - lo) / 2.0;
  for (auto& x : v.voxels()) x = static_cast<float>((static_cast<double>(x) + 1.0) * scale + lo);
}

// One reverse step of view `axis` over slices [begin, end), reading the
// frozen state y and writing into `out`.
void sweep(const EpsPredictor& model, ViewAxis axis, std::size_t begin, std::size_t end, const Volume& x,
           const Volume& y, const Volume& z, int t, const NoiseSchedule& schedule, Volume& out) {
  const std::size_t s = model.context_radius();
  const auto [rows, cols] = cross_section(y.dims(), axis);
  const std::size_t plane = rows * cols;
  const std::size_t channels = 2 * s + 2;
  const std::size_t batch = end - begin;
  std::vector<float> input(batch * channels * plane);
  std::vector<Plane> noisy(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    float* dst = input.data() + b * channels * plane;
    noisy[b] = extract_slice(y, axis, begin + b);
    std::copy(noisy[b].values.begin(), noisy[b].values.end(), dst);
    const SliceStack cond = extract_stack(x, axis, begin + b, s);
    for (std::size_t k = 0; k < cond.planes.size(); ++k) {
      std::copy(cond.planes[k].values.begin(), cond.planes[k].values.end(), dst + (k + 1) * plane);
    }
  }
  std::vector<float> eps(batch * plane);
  model.predict_eps_batch(input, batch, rows, cols, t, eps);
  Plane next(rows, cols);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::span<const float> eps_b(eps.data() + b * plane, plane);
    if (t > 1) {
      const Plane zb = extract_slice(z, axis, begin + b);
      reverse_step(noisy[b].values, eps_b, t, zb.values, schedule, next.values);
    } else {
      reverse_step(noisy[b].values, eps_b, t, {}, schedule, next.values);
    }
    write_slice_into(out, axis, begin + b, next);
  }
}

}  // namespace

void SeededNoise::start_noise(std::span<float> out) { fill_normal(seed_, {kStartKey}, out); }

void SeededNoise::step_noise(int t, std::span<float> out) {
  fill_normal(seed_, {kStepKey, static_cast<std::uint64_t>(t)}, out);
}

Volume madm_sample(const Volume& x, const ViewModelSet& models, const SamplerConfig& config) {
  SeededNoise noise(config.seed);
  return madm_sample(x, models, config, noise);
}

Volume madm_sample(const Volume& x, const ViewModelSet& models, const SamplerConfig& config, NoiseSource& noise) {
  const auto& schedule = models.schedule;
  const int T = schedule.steps();
  config.validate(T);
  models.validate();
  for (auto v : config.sequence()) {
    if (!models.has(v)) throw DependencyError("no trained model for view " + std::string(to_string(v)));
  }
  if (x.empty()) throw ShapeError("sampler: empty input volume");
  const auto [lo, hi] = output_range(x, models);
  const Dims dims = x.dims();

  // y holds the current (averaged) state y_t; `z` first carries the start
  // noise, then each timestep's shared draw.
  Volume y;
  Volume z(dims);
  int t_start = config.t_s;
  if (config.use_prior) {
    y = models.prior->predict(x);
    if (y.dims() != dims) throw ShapeError("sampler: prior changed the volume dims");
    if (config.t_s > 0) {
      noise.start_noise(z.voxels());
      diffuse(y.voxels(), z.voxels(), config.t_s, schedule, y.voxels());
    }
  } else {
    y = Volume(dims);
    noise.start_noise(y.voxels());
    t_start = T;
  }

  const bool averaging = config.mode == SamplerMode::kAveraging;
  const auto& seq = config.sequence();
  std::vector<Volume> buffers(averaging ? config.views.size() : 1);
  for (auto& b : buffers) b = Volume(dims);

  for (int t = t_start; t >= 1; --t) {
    if (t > 1) {
      noise.step_noise(t, z.voxels());
    } else {
      std::fill(z.voxels().begin(), z.voxels().end(), 0.0f);
    }
    std::vector<ViewAxis> active;
    if (averaging) {
      active = config.views;
    } else {
      active = {seq[static_cast<std::size_t>(t_start - t) % seq.size()]};
    }

    struct Chunk {
      std::size_t view;
      std::size_t begin;
      std::size_t end;
    };
    std::vector<Chunk> chunks;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const std::size_t n = extent(dims, active[j]);
      for (std::size_t b = 0; b < n; b += config.slice_batch) {
        chunks.push_back({j, b, std::min(n, b + config.slice_batch)});
      }
    }
    parallel_for(chunks.size(), config.workers, [&](std::size_t k) {
      const auto& c = chunks[k];
      const auto axis = active[c.view];
      sweep(*models.views.at(axis), axis, c.begin, c.end, x, y, z, t, schedule, buffers[c.view]);
    });

    if (active.size() == 1) {
      std::swap(y, buffers[0]);
    } else {
      auto out = y.voxels();
      const double n = static_cast<double>(active.size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        double sum = 0.0;
        for (const auto& b : buffers) sum += b.voxels()[i];
        out[i] = static_cast<float>(sum / n);
      }
    }
    if (!y.all_finite()) {
      throw NumericalError("sampler: non-finite values after the reverse step at t=" + std::to_string(t));
    }
  }

  denormalize_in_place(y, lo, hi);
  y.meta() = x.meta();
  y.meta().erase("normalization");
  return y;
}

Volume mvsd_sample(const Volume& x, const ViewModelSet& models, const SamplerConfig& config) {
  auto c = config;
  c.mode = SamplerMode::kSequential;
  return madm_sample(x, models, c);
}

std::uint64_t input_seed(std::uint64_t master, const Volume& x) {
  const auto v = x.voxels();
  const auto digest = sha256_hex(
      std::span<const char>(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float)));
  const std::uint64_t key = std::stoull(digest.substr(0, 16), nullptr, 16);
  return derive_seed(master, {key});
}

std::vector<Volume> sample_batch(const std::vector<Volume>& inputs, const ViewModelSet& models,
                                 const SamplerConfig& config) {
  std::vector<Volume> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) {
    auto c = config;
    c.seed = input_seed(config.seed, x);
    out.push_back(madm_sample(x, models, c));
  }
  return out;
}

}  // namespace madm
