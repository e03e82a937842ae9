#include "ncadapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "ncadapt/errors.hpp"
#include "ncadapt/hash.hpp"
#include "ncadapt/json_util.hpp"
#include "ncadapt/rti.hpp"

namespace ncadapt {

using nlohmann::json;

void DomainSpec::validate() const {
  auto fail = [this](const std::string& m) { throw UsageError("domain '" + name + "': " + m); };
  if (name.empty()) throw UsageError("domain name must not be empty");
  if (resolution.empty() || resolution.size() > 3) fail("resolution must have 1 to 3 axes");
  for (std::size_t e : resolution)
    if (e < 16) fail("resolution extents must be >= 16");
  if (n_cases < 1) fail("n_cases must be >= 1");
  const auto& f = foreground;
  if (f.min_ellipses < 1 || f.max_ellipses < f.min_ellipses) fail("ellipse count range is invalid");
  if (!(f.min_radius > 0 && f.max_radius >= f.min_radius)) fail("radius range is invalid");
  if (!(f.margin >= 0 && f.margin < 0.5)) fail("margin must be in [0, 0.5)");
  if (!(f.softness > 0)) fail("softness must be positive");
  if (!(noise_sigma >= 0) || !(bias_amplitude >= 0)) fail("noise and bias amplitude must be >= 0");
}

namespace {

struct Ellipse {
  std::vector<double> centre;
  std::vector<double> radius;
  double angle = 0;  // rotation in the plane of the last two axes
};

std::vector<Ellipse> draw_ellipses(const DomainSpec& spec, Rng& rng) {
  const auto& f = spec.foreground;
  const std::size_t d = spec.resolution.size();
  const double smallest = static_cast<double>(*std::min_element(spec.resolution.begin(), spec.resolution.end()));
  const std::size_t count = f.min_ellipses + rng.below(f.max_ellipses - f.min_ellipses + 1);
  std::vector<Ellipse> out(count);
  for (auto& e : out) {
    e.centre.resize(d);
    e.radius.resize(d);
    for (std::size_t a = 0; a < d; ++a) {
      const double ext = static_cast<double>(spec.resolution[a]);
      e.centre[a] = rng.uniform(f.margin * ext, (1.0 - f.margin) * ext);
      e.radius[a] = rng.uniform(f.min_radius, f.max_radius) * smallest;
    }
    e.angle = rng.uniform(0.0, std::numbers::pi);
  }
  return out;
}

// Soft occupancy in [0, 1]: sigmoid of the approximate signed distance.
double ellipse_field(const Ellipse& e, const std::vector<double>& pos, double softness) {
  const std::size_t d = pos.size();
  std::vector<double> u(d);
  for (std::size_t a = 0; a < d; ++a) u[a] = pos[a] - e.centre[a];
  if (d >= 2) {
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    const double y = u[d - 2], x = u[d - 1];
    u[d - 2] = c * y - s * x;
    u[d - 1] = s * y + c * x;
  }
  double r2 = 0, rmin = e.radius[0];
  for (std::size_t a = 0; a < d; ++a) {
    r2 += (u[a] / e.radius[a]) * (u[a] / e.radius[a]);
    rmin = std::min(rmin, e.radius[a]);
  }
  const double sd = (std::sqrt(r2) - 1.0) * rmin;
  return 1.0 / (1.0 + std::exp(sd / softness));
}

Sample make_case(const DomainSpec& spec, std::size_t index) {
  Rng rng(spec.seed, stream_id({label_hash("case"), index}));
  const std::size_t d = spec.resolution.size();
  const std::size_t n = numel(spec.resolution);
  std::vector<double> field(n, 0.0);
  std::vector<float> label(n);

  for (int attempt = 0;; ++attempt) {
    if (attempt > 10) throw DataError("domain '" + spec.name + "': case " + std::to_string(index) + " has no foreground");
    const auto ellipses = draw_ellipses(spec, rng);
    std::vector<double> pos(d);
    std::size_t fg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t rem = i;
      for (std::size_t a = d; a-- > 0;) {
        pos[a] = static_cast<double>(rem % spec.resolution[a]) + 0.5;
        rem /= spec.resolution[a];
      }
      double v = 0;
      for (const auto& e : ellipses) v = std::max(v, ellipse_field(e, pos, spec.foreground.softness));
      field[i] = v;
      label[i] = v > 0.5 ? 1.0f : 0.0f;
      fg += label[i] > 0;
    }
    if (fg > 0) break;
  }

  // Additive bias field: product of one low-frequency cosine per axis.
  std::vector<double> freq(d), phase(d);
  for (std::size_t a = 0; a < d; ++a) {
    freq[a] = rng.uniform(0.5, 1.0);
    phase[a] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::vector<float> image(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rem = i;
    double bias = spec.bias_amplitude;
    for (std::size_t a = d; a-- > 0;) {
      const double t = static_cast<double>(rem % spec.resolution[a]) / static_cast<double>(spec.resolution[a]);
      rem /= spec.resolution[a];
      bias *= std::cos(2.0 * std::numbers::pi * freq[a] * t + phase[a]);
    }
    const double noise = spec.noise_sigma > 0 ? spec.noise_sigma * rng.normal() : 0.0;
    const double v = spec.scale * field[i] + spec.shift + bias + noise;
    image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }

  char id[32];
  std::snprintf(id, sizeof id, "case%03zu", index);
  return Sample{id, Tensor::from_values(spec.resolution, std::move(image)),
                Tensor::from_values(spec.resolution, std::move(label))};
}

}  // namespace

std::vector<Sample> gen_domain(const DomainSpec& spec) {
  spec.validate();
  std::vector<Sample> out;
  out.reserve(spec.n_cases);
  for (std::size_t i = 0; i < spec.n_cases; ++i) out.push_back(make_case(spec, i));
  return out;
}

Split split_dataset(std::size_t n_cases, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must be in (0, 1)");
  if (n_cases < 5) throw UsageError("splitting needs at least 5 cases");
  std::vector<std::size_t> idx(n_cases);
  for (std::size_t i = 0; i < n_cases; ++i) idx[i] = i;
  Rng rng(seed, label_hash("split"));
  for (std::size_t i = n_cases - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n_cases) * test_fraction));
  n_test = std::clamp<std::size_t>(n_test, 1, n_cases - 1);
  Split s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::vector<DomainSpec> default_benchmark() {
  // Shift grows from domain to domain; the last one also changes resolution.
  DomainSpec a;
  a.name = "clean";
  a.resolution = {32, 32};
  a.scale = 0.60;
  a.shift = 0.10;
  a.noise_sigma = 0.03;
  a.bias_amplitude = 0.03;
  a.seed = 101;

  DomainSpec b;
  b.name = "dim";
  b.resolution = {32, 32};
  b.scale = 0.40;
  b.shift = 0.30;
  b.noise_sigma = 0.05;
  b.bias_amplitude = 0.06;
  b.seed = 202;

  DomainSpec c;
  c.name = "washed";
  c.resolution = {48, 40};
  c.scale = 0.30;
  c.shift = 0.60;
  c.noise_sigma = 0.06;
  c.bias_amplitude = 0.08;
  c.seed = 303;
  return {a, b, c};
}

json to_json(const DomainSpec& s) {
  const auto& f = s.foreground;
  return json{{"name", s.name},
              {"resolution", s.resolution},
              {"n_cases", s.n_cases},
              {"foreground",
               {{"min_ellipses", f.min_ellipses},
                {"max_ellipses", f.max_ellipses},
                {"min_radius", f.min_radius},
                {"max_radius", f.max_radius},
                {"margin", f.margin},
                {"softness", f.softness}}},
              {"scale", s.scale},
              {"shift", s.shift},
              {"noise_sigma", s.noise_sigma},
              {"bias_amplitude", s.bias_amplitude},
              {"seed", s.seed}};
}

DomainSpec domain_spec_from_json(const json& j) {
  reject_unknown(j, {"name", "resolution", "n_cases", "foreground", "scale", "shift", "noise_sigma", "bias_amplitude", "seed"},
                 "domain spec");
  DomainSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    if (j.contains("resolution")) s.resolution = field(j, "resolution", s.resolution);
    if (j.contains("n_cases")) s.n_cases = field(j, "n_cases", s.n_cases);
    if (j.contains("foreground")) {
      const json& f = j["foreground"];
      reject_unknown(f, {"min_ellipses", "max_ellipses", "min_radius", "max_radius", "margin", "softness"}, "foreground");
      auto& r = s.foreground;
      r.min_ellipses = field(f, "min_ellipses", r.min_ellipses);
      r.max_ellipses = field(f, "max_ellipses", r.max_ellipses);
      r.min_radius = field(f, "min_radius", r.min_radius);
      r.max_radius = field(f, "max_radius", r.max_radius);
      r.margin = field(f, "margin", r.margin);
      r.softness = field(f, "softness", r.softness);
    }
    s.scale = field(j, "scale", s.scale);
    s.shift = field(j, "shift", s.shift);
    s.noise_sigma = field(j, "noise_sigma", s.noise_sigma);
    s.bias_amplitude = field(j, "bias_amplitude", s.bias_amplitude);
    s.seed = field(j, "seed", s.seed);
  } catch (const json::exception& e) {
    throw UsageError(std::string("domain spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::string spec_hash(const DomainSpec& spec) { return sha256_hex(to_json(spec).dump()); }

namespace {

DomainData assemble(const DomainSpec& spec, std::vector<Sample> cases, const Split& split) {
  DomainData d;
  d.name = spec.name;
  d.resolution = spec.resolution;
  for (std::size_t i : split.train) d.train.push_back(cases[i]);
  for (std::size_t i : split.test) d.test.push_back(cases[i]);
  return d;
}

}  // namespace

DomainData make_domain_data(const DomainSpec& spec, double test_fraction, std::uint64_t split_seed) {
  auto cases = gen_domain(spec);
  const auto split = split_dataset(cases.size(), test_fraction, stream_id({split_seed, label_hash(spec.name)}));
  return assemble(spec, std::move(cases), split);
}

void write_dataset(const std::filesystem::path& root, const std::vector<DomainSpec>& specs, double test_fraction,
                   std::uint64_t split_seed) {
  namespace fs = std::filesystem;
  json manifest{{"schema_version", 1}, {"test_fraction", test_fraction}, {"split_seed", split_seed}};
  json domains = json::array();
  for (const auto& spec : specs) {
    for (const auto& other : domains)
      if (other["name"] == spec.name) throw UsageError("duplicate domain name '" + spec.name + "'");
    const auto cases = gen_domain(spec);
    const auto split = split_dataset(cases.size(), test_fraction, stream_id({split_seed, label_hash(spec.name)}));
    const fs::path dir = root / spec.name;
    fs::create_directories(dir);
    for (const auto& c : cases) {
      write_rti(dir / (c.id + "_img.rti"), c.image);
      write_rti(dir / (c.id + "_lbl.rti"), c.label);
    }
    json train = json::array(), test = json::array();
    for (std::size_t i : split.train) train.push_back(cases[i].id);
    for (std::size_t i : split.test) test.push_back(cases[i].id);
    domains.push_back({{"name", spec.name},
                       {"spec", to_json(spec)},
                       {"spec_hash", spec_hash(spec)},
                       {"train", train},
                       {"test", test}});
  }
  manifest["domains"] = domains;
  std::ofstream out(root / "manifest.json");
  if (!out) throw DataError("cannot write " + (root / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

namespace {

json read_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw DataError("missing dataset manifest in " + root.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset manifest: ") + e.what());
  }
}

Sample load_case(const std::filesystem::path& dir, const std::string& id, const Shape& resolution) {
  Sample s{id, read_rti(dir / (id + "_img.rti")), read_rti(dir / (id + "_lbl.rti"))};
  if (s.image.shape() != resolution || s.label.shape() != resolution)
    throw DataError("case " + id + " does not have the domain's resolution");
  for (float v : s.label.data())
    if (v != 0.0f && v != 1.0f) throw DataError("label of case " + id + " is not binary");
  for (float v : s.image.data())
    if (v < 0.0f || v > 1.0f) throw DataError("image of case " + id + " is not normalised to [0,1]");
  return s;
}

}  // namespace

std::vector<std::string> list_domains(const std::filesystem::path& root) {
  std::vector<std::string> out;
  const json manifest = read_manifest(root);
  for (const auto& d : manifest.at("domains")) out.push_back(d.at("name").get<std::string>());
  return out;
}

DomainData load_domain(const std::filesystem::path& root, const std::string& name) {
  const json manifest = read_manifest(root);
  for (const auto& d : manifest.at("domains")) {
    if (d.at("name") != name) continue;
    const DomainSpec spec = domain_spec_from_json(d.at("spec"));
    if (d.at("spec_hash") != spec_hash(spec)) throw DataError("spec hash mismatch for domain " + name);
    DomainData out;
    out.name = name;
    out.resolution = spec.resolution;
    for (const auto& id : d.at("train")) out.train.push_back(load_case(root / name, id.get<std::string>(), spec.resolution));
    for (const auto& id : d.at("test")) out.test.push_back(load_case(root / name, id.get<std::string>(), spec.resolution));
    if (out.train.empty() || out.test.empty()) throw DataError("domain " + name + " has an empty split");
    return out;
  }
  throw DataError("domain '" + name + "' is not in the dataset manifest");
}

}  // namespace ncadapt
