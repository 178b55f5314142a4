#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "cadps/gmm.hpp"
#include "cadps/guidance.hpp"
#include "cadps/linalg.hpp"
#include "cadps/measurement.hpp"
#include "cadps/metrics.hpp"
#include "cadps/random.hpp"
#include "cadps/sampler.hpp"
#include "cadps/schedule.hpp"

namespace cadps {

struct ExperimentGrid {
  std::vector<int> dims{8, 80, 800};
  std::vector<int> ms{1, 2, 4};
  std::vector<double> sigmas{0.01, 0.1, 1.0};
  int models_per_cell = 20;
  int chains_per_model = 1000;
  std::vector<GuidanceMethod> methods{{.tag = Method::kCadps}, {.tag = Method::kDps}, {.tag = Method::kPigdm}};

  int n_steps = 1000;
  double beta_min = 0.1;
  double beta_max = 500.0;
  SwConfig sw{};
  SamplerOptions sampler{};
  double max_abort_fraction = 0.10;
  int workers = 0;      // 0 selects std::thread::hardware_concurrency()
  bool timing = true;   // false writes wall_ms = 0 so outputs are byte-reproducible
  bool keep_first_model_samples = false;

  static ExperimentGrid smoke() {
    ExperimentGrid g;
    g.dims = {8, 80};
    g.models_per_cell = 5;
    g.chains_per_model = 200;
    g.sw.n_slices = 1000;
    g.n_steps = 200;
    return g;
  }

  void validate() const {
    if (dims.empty() || ms.empty() || sigmas.empty()) throw std::invalid_argument("grid: empty parameter set");
    if (methods.empty()) throw std::invalid_argument("grid: no methods selected");
    if (models_per_cell < 1 || chains_per_model < 1) throw std::invalid_argument("grid: counts must be positive");
    for (int d : dims)
      if (d < 1) throw std::invalid_argument("grid: d must be positive");
    for (int m : ms)
      if (m < 1) throw std::invalid_argument("grid: m must be positive");
    for (double s : sigmas)
      if (!(s > 0.0)) throw std::invalid_argument("grid: sigma must be positive");
    for (std::size_t i = 0; i < methods.size(); ++i) {
      methods[i].validate();
      // Records and summaries are keyed by tag, so variants of one method need separate runs.
      for (std::size_t j = 0; j < i; ++j)
        if (methods[j].tag == methods[i].tag) throw std::invalid_argument("grid: method listed twice");
    }
    sw.validate();
    if (workers < 0) throw std::invalid_argument("grid: workers must be non-negative");
  }

  int worker_count() const {
    if (workers > 0) return workers;
    return std::max(1u, std::thread::hardware_concurrency());
  }

  std::shared_ptr<const NoiseSchedule> schedule() const {
    return std::make_shared<const NoiseSchedule>(NoiseSchedule::linear_vp(n_steps, beta_min, beta_max));
  }
};

struct ExperimentRecord {
  int d = 0;
  int m = 0;
  double sigma = 0.0;
  Method method = Method::kCadps;
  std::uint64_t model_seed = 0;
  double sw = 0.0;
  std::int64_t cg_failures = 0;
  double wall_ms = 0.0;

  bool operator==(const ExperimentRecord&) const = default;
};

struct CellResult {
  int d = 0;
  int m = 0;
  double sigma = 0.0;
  std::vector<ExperimentRecord> records;
  std::int64_t chains = 0;
  std::int64_t aborted = 0;
  bool invalid = false;
  // Model 0 only, when ExperimentGrid::keep_first_model_samples is set.
  Matrix first_reference;
  std::vector<std::pair<Method, Matrix>> first_samples;
};

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Results must be
/// written by index so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  const auto n_threads = static_cast<std::size_t>(std::max(1, workers));
  if (n_threads == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(n_threads, count); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

namespace detail {

inline std::uint64_t sigma_tag(double sigma) {
  std::uint64_t bits = 0;
  static_assert(sizeof(bits) == sizeof(sigma));
  std::memcpy(&bits, &sigma, sizeof(bits));
  return bits;
}

enum SeedStream : std::uint64_t { kMatrix = 1, kObservation = 2, kReference = 3, kSlices = 4, kChains = 5 };

}  // namespace detail

inline std::uint64_t cell_seed(std::uint64_t master_seed, int d, int m, double sigma) {
  return derive_seed(master_seed, {static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(m),
                                   detail::sigma_tag(sigma)});
}

inline std::uint64_t model_seed(std::uint64_t cell, int model_index) {
  return derive_seed(cell, {static_cast<std::uint64_t>(model_index)});
}

/// The toy problem behind one model seed: prior, measurement, exact posterior.
struct ToyProblem {
  GaussianMixture prior;
  MeasurementModel meas;
  GaussianMixture posterior;
};

inline ToyProblem build_toy_problem(int d, int m, double sigma, std::uint64_t seed) {
  GaussianMixture prior = build_toy_prior(d);
  const GeneratedMatrix a = generate_measurement_matrix(d, m, derive_seed(seed, {detail::kMatrix}));
  MeasurementModel meas = generate_observation(a.a, prior, sigma, derive_seed(seed, {detail::kObservation}));
  meas.singular_values = a.singular_values;
  GaussianMixture posterior = exact_posterior(prior, meas);
  return {std::move(prior), std::move(meas), std::move(posterior)};
}

struct ChainBatch {
  Matrix samples;  // finite chain outputs, in chain order
  std::int64_t aborted = 0;
  std::int64_t cg_failures = 0;
};

/// Runs `n` guided chains; chain i is seeded from (seed, i) for every method,
/// so methods are compared on common random numbers.
inline ChainBatch run_chains(const ToyProblem& problem, const std::shared_ptr<const NoiseSchedule>& schedule,
                             const GuidanceMethod& method, const SamplerOptions& options, int n, std::uint64_t seed,
                             int workers) {
  std::vector<ChainResult> results(static_cast<std::size_t>(n));
  parallel_for(results.size(), workers, [&](std::size_t i) {
    ChainConfig cfg{schedule, method, derive_seed(seed, {static_cast<std::uint64_t>(i)}), false, options};
    try {
      results[i] = run_guided_chain(problem.prior, problem.meas, cfg);
    } catch (const NumericalError& e) {
      results[i].finite = false;
      results[i].diagnostic = e.what();
    }
  });
  ChainBatch batch;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < results.size(); ++i) {
    batch.cg_failures += results[i].cg_failures;
    if (results[i].finite) keep.push_back(static_cast<Eigen::Index>(i));
    else ++batch.aborted;
  }
  batch.samples.resize(static_cast<Eigen::Index>(keep.size()), problem.prior.dim());
  for (std::size_t r = 0; r < keep.size(); ++r)
    batch.samples.row(static_cast<Eigen::Index>(r)) = results[static_cast<std::size_t>(keep[r])].x0.transpose();
  return batch;
}

inline bool record_less(const ExperimentRecord& a, const ExperimentRecord& b) {
  return std::tie(a.d, a.m, a.sigma, a.method, a.model_seed) < std::tie(b.d, b.m, b.sigma, b.method, b.model_seed);
}

/// One record per (model, method). Reference samples come from the exact
/// posterior; when chains abort the reference is truncated to the same count.
inline CellResult run_cell(int d, int m, double sigma, const ExperimentGrid& grid, std::uint64_t master_seed) {
  grid.validate();
  if (m > d) throw std::invalid_argument("run_cell: m must not exceed d");
  const auto schedule = grid.schedule();
  const int workers = grid.worker_count();
  const std::uint64_t cseed = cell_seed(master_seed, d, m, sigma);

  CellResult cell;
  cell.d = d;
  cell.m = m;
  cell.sigma = sigma;
  for (int k = 0; k < grid.models_per_cell; ++k) {
    const std::uint64_t mseed = model_seed(cseed, k);
    const ToyProblem problem = build_toy_problem(d, m, sigma, mseed);
    const Matrix reference =
        sample_mixture(problem.posterior, grid.chains_per_model, derive_seed(mseed, {detail::kReference}));
    SwConfig sw = grid.sw;
    sw.rng_seed = derive_seed(mseed, {detail::kSlices});
    const Matrix slices = make_slices(d, sw);
    const Matrix reference_sorted = sorted_projections(reference, slices);
    const std::uint64_t chain_seed = derive_seed(mseed, {detail::kChains});
    const bool keep = grid.keep_first_model_samples && k == 0;
    if (keep) cell.first_reference = reference;

    for (const auto& method : grid.methods) {
      const auto start = std::chrono::steady_clock::now();
      const ChainBatch batch =
          run_chains(problem, schedule, method, grid.sampler, grid.chains_per_model, chain_seed, workers);
      cell.chains += grid.chains_per_model;
      cell.aborted += batch.aborted;

      double sw_value = std::numeric_limits<double>::quiet_NaN();
      const Eigen::Index n = batch.samples.rows();
      if (n == grid.chains_per_model) {
        sw_value = sliced_wasserstein_sorted(sorted_projections(batch.samples, slices), reference_sorted, sw.order);
      } else if (n > 0) {
        sw_value = sliced_wasserstein(batch.samples, reference.topRows(n), slices, sw.order);
      }
      const auto stop = std::chrono::steady_clock::now();
      const double wall =
          grid.timing ? std::chrono::duration<double, std::milli>(stop - start).count() : 0.0;
      cell.records.push_back({d, m, sigma, method.tag, mseed, sw_value, batch.cg_failures, std::round(wall)});
      if (keep) cell.first_samples.emplace_back(method.tag, batch.samples);
    }
  }
  cell.invalid = static_cast<double>(cell.aborted) > grid.max_abort_fraction * static_cast<double>(cell.chains);
  std::sort(cell.records.begin(), cell.records.end(), record_less);
  return cell;
}

// ---- output -----------------------------------------------------------------

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  return v;
}

template <typename Int>
Int parse_integer(std::string_view s) {
  Int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
  return v;
}

inline constexpr std::string_view kResultsHeader = "d,m,sigma,method,model_seed,sw,cg_failures,wall_ms";
inline constexpr std::string_view kSummaryHeader = "d,m,sigma,method,sw_mean,sw_ci95";

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

inline void finish_output(std::ofstream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

inline void write_results_csv(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  os << kResultsHeader << '\n';
  for (const auto& r : records) {
    os << r.d << ',' << r.m << ',' << format_double(r.sigma) << ',' << method_name(r.method) << ','
       << r.model_seed << ',' << format_double(r.sw) << ',' << r.cg_failures << ',' << format_double(r.wall_ms)
       << '\n';
  }
}

inline nlohmann::json record_to_json(const ExperimentRecord& r) {
  return {{"d", r.d},           {"m", r.m},   {"sigma", r.sigma},
          {"method", std::string(method_name(r.method))},
          {"model_seed", r.model_seed}, {"sw", r.sw}, {"cg_failures", r.cg_failures},
          {"wall_ms", r.wall_ms}};
}

inline void write_results_jsonl(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  for (const auto& r : records) os << record_to_json(r).dump() << '\n';
}

struct SummaryRow {
  int d;
  int m;
  double sigma;
  Method method;
  double sw_mean;
  double sw_ci95;  // NaN with fewer than two models
};

/// Groups records by (d, m, sigma, method). Non-finite sw values are excluded.
inline std::vector<SummaryRow> summarize(const std::vector<ExperimentRecord>& records) {
  std::map<std::tuple<int, int, double, Method>, std::vector<double>> groups;
  for (const auto& r : records) {
    auto& g = groups[{r.d, r.m, r.sigma, r.method}];
    if (std::isfinite(r.sw)) g.push_back(r.sw);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, values] : groups) {
    const auto [d, m, sigma, method] = key;
    SummaryRow row{d, m, sigma, method, std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN()};
    if (values.size() >= 2) {
      const auto ci = aggregate_ci(values);
      row.sw_mean = ci.mean;
      row.sw_ci95 = ci.halfwidth;
    } else if (values.size() == 1) {
      row.sw_mean = values.front();
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    os << r.d << ',' << r.m << ',' << format_double(r.sigma) << ',' << method_name(r.method) << ','
       << format_double(r.sw_mean) << ',' << format_double(r.sw_ci95) << '\n';
  }
}

enum class ResultFormat { kCsv, kJsonl };

/// CSV output also writes `<stem>_summary.csv` next to `path`.
inline void emit_results(const std::vector<ExperimentRecord>& records, ResultFormat format,
                         const std::filesystem::path& path) {
  if (records.empty()) throw std::invalid_argument("emit_results: no records");
  std::vector<ExperimentRecord> sorted = records;
  std::stable_sort(sorted.begin(), sorted.end(), record_less);
  auto os = open_output(path);
  if (format == ResultFormat::kJsonl) {
    write_results_jsonl(os, sorted);
    finish_output(os, path);
    return;
  }
  write_results_csv(os, sorted);
  finish_output(os, path);

  auto summary_path = path;
  summary_path.replace_filename(path.stem().string() + "_summary.csv");
  auto sos = open_output(summary_path);
  write_summary_csv(sos, summarize(sorted));
  finish_output(sos, summary_path);
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

inline std::vector<ExperimentRecord> parse_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kResultsHeader)
    throw std::invalid_argument("results csv: unexpected header");
  std::vector<ExperimentRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw std::invalid_argument("results csv: expected 8 fields, got " + std::to_string(f.size()));
    records.push_back({parse_integer<int>(f[0]), parse_integer<int>(f[1]), parse_double(f[2]), parse_method(f[3]),
                       parse_integer<std::uint64_t>(f[4]), parse_double(f[5]), parse_integer<std::int64_t>(f[6]),
                       parse_double(f[7])});
  }
  return records;
}

inline std::vector<ExperimentRecord> parse_results_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return parse_results_csv(is);
}

inline std::vector<ExperimentRecord> parse_results_jsonl(std::istream& is) {
  std::vector<ExperimentRecord> records;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    records.push_back({j.at("d").get<int>(), j.at("m").get<int>(), j.at("sigma").get<double>(),
                       parse_method(j.at("method").get<std::string>()), j.at("model_seed").get<std::uint64_t>(),
                       j.at("sw").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("sw").get<double>(),
                       j.at("cg_failures").get<std::int64_t>(), j.at("wall_ms").get<double>()});
  }
  return records;
}

/// First two coordinates of both sample sets, labelled by block.
inline void emit_scatter(const Matrix& samples, const Matrix& reference, const std::filesystem::path& path) {
  if (samples.cols() < 2 || reference.cols() < 2) throw std::invalid_argument("emit_scatter: need d >= 2");
  auto os = open_output(path);
  os << "block,x1,x2\n";
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    os << "samples," << format_double(samples(i, 0)) << ',' << format_double(samples(i, 1)) << '\n';
  for (Eigen::Index i = 0; i < reference.rows(); ++i)
    os << "reference," << format_double(reference(i, 0)) << ',' << format_double(reference(i, 1)) << '\n';
  finish_output(os, path);
}

// ---- configuration ----------------------------------------------------------

struct RunConfig {
  ExperimentGrid grid;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "results";
};

inline JacobianMode parse_jacobian_mode(const std::string& s) {
  if (s == "exact") return JacobianMode::kExact;
  if (s == "scaled_identity" || s == "identity") return JacobianMode::kScaledIdentity;
  throw std::invalid_argument("unknown jacobian mode '" + s + "'");
}

inline FdTimeUnit parse_dt_unit(const std::string& s) {
  if (s == "step") return FdTimeUnit::kStep;
  if (s == "continuous") return FdTimeUnit::kContinuous;
  throw std::invalid_argument("unknown dt convention '" + s + "'");
}

inline GuidanceMethod method_from_json(const nlohmann::json& j) {
  GuidanceMethod m;
  if (j.is_string()) {
    m.tag = parse_method(j.get<std::string>());
    return m;
  }
  m.tag = parse_method(j.at("name").get<std::string>());
  m.zeta = j.value("zeta", m.zeta);
  m.hessian_floor = j.value("hessian_floor", m.hessian_floor);
  if (j.contains("jacobian")) m.jacobian = parse_jacobian_mode(j.at("jacobian").get<std::string>());
  if (j.contains("dt")) m.dt_unit = parse_dt_unit(j.at("dt").get<std::string>());
  m.cg_tol = j.value("cg_tol", m.cg_tol);
  m.cg_max_iter = j.value("cg_max_iter", m.cg_max_iter);
  return m;
}

/// Unknown keys are rejected so typos do not silently fall back to defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  static const std::vector<std::string> known{"dims", "ms", "sigmas", "models_per_cell", "chains_per_model", "methods",
                                              "schedule", "sw", "sampler", "seed", "out", "workers", "timing",
                                              "max_abort_fraction"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("config: unknown key '" + key + "'");

  auto& g = base.grid;
  if (j.contains("dims")) g.dims = j.at("dims").get<std::vector<int>>();
  if (j.contains("ms")) g.ms = j.at("ms").get<std::vector<int>>();
  if (j.contains("sigmas")) g.sigmas = j.at("sigmas").get<std::vector<double>>();
  g.models_per_cell = j.value("models_per_cell", g.models_per_cell);
  g.chains_per_model = j.value("chains_per_model", g.chains_per_model);
  if (j.contains("methods")) {
    g.methods.clear();
    for (const auto& mj : j.at("methods")) g.methods.push_back(method_from_json(mj));
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    g.n_steps = s.value("n_steps", g.n_steps);
    g.beta_min = s.value("beta_min", g.beta_min);
    g.beta_max = s.value("beta_max", g.beta_max);
  }
  if (j.contains("sw")) {
    const auto& s = j.at("sw");
    g.sw.n_slices = s.value("n_slices", g.sw.n_slices);
    g.sw.order = s.value("order", g.sw.order);
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    if (s.contains("guidance_step")) {
      const auto v = s.at("guidance_step").get<std::string>();
      if (v == "score") g.sampler.step_mode = GuidanceStep::kScoreConsistent;
      else if (v == "literal") g.sampler.step_mode = GuidanceStep::kLiteral;
      else throw std::invalid_argument("config: guidance_step must be 'score' or 'literal'");
    }
    g.sampler.guidance_scale = s.value("guidance_scale", g.sampler.guidance_scale);
    if (s.contains("final_step")) {
      const auto v = s.at("final_step").get<std::string>();
      if (v == "posterior_draw") g.sampler.final_step = FinalStep::kPosteriorDraw;
      else if (v == "mean") g.sampler.final_step = FinalStep::kMean;
      else throw std::invalid_argument("config: final_step must be 'posterior_draw' or 'mean'");
    }
    g.sampler.negligible_alpha_bar = s.value("negligible_alpha_bar", g.sampler.negligible_alpha_bar);
  }
  g.workers = j.value("workers", g.workers);
  g.timing = j.value("timing", g.timing);
  g.max_abort_fraction = j.value("max_abort_fraction", g.max_abort_fraction);
  base.seed = j.value("seed", base.seed);
  if (j.contains("out")) base.out_dir = j.at("out").get<std::string>();
  return base;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path.string());
  return run_config_from_json(nlohmann::json::parse(is), std::move(base));
}

}  // namespace cadps
