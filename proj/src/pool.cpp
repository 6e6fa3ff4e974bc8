#include "voxaug/pool.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "voxaug/config_json.hpp"
#include "voxaug/digest.hpp"
#include "voxaug/field.hpp"
#include "voxaug/nifti.hpp"

namespace voxaug {

using nlohmann::json;

void to_json(json& j, const RegistrationConfig& c) {
  j = json{{"mapping_dim", c.mapping_dim},
           {"sigma_b", c.sigma_b},
           {"hidden_sizes", c.hidden_sizes},
           {"steps", c.steps},
           {"reg_weight", c.reg_weight},
           {"iterations", c.iterations},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"seed", c.seed},
           {"similarity", c.similarity == RegistrationConfig::Similarity::Mse ? "mse" : "ncc"}};
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      fail(ErrorCode::Argument, std::string(what) + ": unknown config key '" + item.key() + "'");
  }
}

}  // namespace

void from_json(const json& j, RegistrationConfig& c) {
  check_keys(j,
             {"mapping_dim", "sigma_b", "hidden_sizes", "steps", "reg_weight", "iterations",
              "batch_size", "learning_rate", "seed", "similarity"},
             "RegistrationConfig");
  take(j, "mapping_dim", c.mapping_dim);
  take(j, "sigma_b", c.sigma_b);
  take(j, "hidden_sizes", c.hidden_sizes);
  take(j, "steps", c.steps);
  take(j, "reg_weight", c.reg_weight);
  take(j, "iterations", c.iterations);
  take(j, "batch_size", c.batch_size);
  take(j, "learning_rate", c.learning_rate);
  take(j, "seed", c.seed);
  if (j.contains("similarity")) {
    const std::string s = j.at("similarity").get<std::string>();
    if (s == "mse")
      c.similarity = RegistrationConfig::Similarity::Mse;
    else if (s == "ncc")
      c.similarity = RegistrationConfig::Similarity::Ncc;
    else
      fail(ErrorCode::Argument, "RegistrationConfig: similarity must be mse or ncc");
  }
  c.validate();
}

void to_json(json& j, const RigidOptions& o) {
  j = json{{"mi_bins", o.mi_bins},
           {"pyramid_factors", o.pyramid_factors},
           {"sweeps_per_level", o.sweeps_per_level},
           {"initial_step_mm", o.initial_step_mm},
           {"initial_step_rad", o.initial_step_rad},
           {"min_step_mm", o.min_step_mm},
           {"min_step_rad", o.min_step_rad}};
}

void from_json(const json& j, RigidOptions& o) {
  check_keys(j,
             {"mi_bins", "pyramid_factors", "sweeps_per_level", "initial_step_mm",
              "initial_step_rad", "min_step_mm", "min_step_rad"},
             "RigidOptions");
  take(j, "mi_bins", o.mi_bins);
  take(j, "pyramid_factors", o.pyramid_factors);
  take(j, "sweeps_per_level", o.sweeps_per_level);
  take(j, "initial_step_mm", o.initial_step_mm);
  take(j, "initial_step_rad", o.initial_step_rad);
  take(j, "min_step_mm", o.min_step_mm);
  take(j, "min_step_rad", o.min_step_rad);
}

void to_json(json& j, const InjectionConfig& c) {
  j = json{{"tau", c.tau},
           {"sigma", c.sigma},
           {"histogram_bins", c.histogram_bins},
           {"mi_bins", c.mi_bins},
           {"jitter_max_translation", c.jitter_max_translation},
           {"jitter_max_rotation_deg", c.jitter_max_rotation_deg},
           {"brain_margin", c.brain_margin},
           {"max_placement_attempts", c.max_placement_attempts},
           {"seed", c.seed},
           {"rigid", c.rigid}};
}

void from_json(const json& j, InjectionConfig& c) {
  check_keys(j,
             {"tau", "sigma", "histogram_bins", "mi_bins", "jitter_max_translation",
              "jitter_max_rotation_deg", "brain_margin", "max_placement_attempts", "seed",
              "rigid"},
             "InjectionConfig");
  take(j, "tau", c.tau);
  take(j, "sigma", c.sigma);
  take(j, "histogram_bins", c.histogram_bins);
  take(j, "mi_bins", c.mi_bins);
  take(j, "jitter_max_translation", c.jitter_max_translation);
  take(j, "jitter_max_rotation_deg", c.jitter_max_rotation_deg);
  take(j, "brain_margin", c.brain_margin);
  take(j, "max_placement_attempts", c.max_placement_attempts);
  take(j, "seed", c.seed);
  take(j, "rigid", c.rigid);
  c.validate();
}

std::string config_hash(const json& j) { return sha256_hex(j.dump()).substr(0, 16); }

std::string to_string(SampleKind k) {
  switch (k) {
    case SampleKind::Real: return "real";
    case SampleKind::SpatialAug: return "spatial_aug";
    case SampleKind::SemanticAug: return "semantic_aug";
  }
  return "real";
}

SampleKind sample_kind_from_string(const std::string& s) {
  if (s == "real") return SampleKind::Real;
  if (s == "spatial_aug") return SampleKind::SpatialAug;
  if (s == "semantic_aug") return SampleKind::SemanticAug;
  fail(ErrorCode::Format, "unknown sample kind: " + s);
}

PoolCounts PoolManifest::counts() const {
  PoolCounts c;
  for (const auto& e : entries) {
    if (e.kind == SampleKind::Real) ++c.real;
    if (e.kind == SampleKind::SpatialAug) ++c.spatial_aug;
    if (e.kind == SampleKind::SemanticAug) ++c.semantic_aug;
  }
  return c;
}

void PoolManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second)
      fail(ErrorCode::Argument, "PoolManifest: duplicate entry id " + e.id);
    if (e.kind == SampleKind::Real && e.provenance.has_value())
      fail(ErrorCode::Argument, "PoolManifest: real entry carries synthesis provenance: " + e.id);
    if (e.kind != SampleKind::Real && !e.provenance.has_value())
      fail(ErrorCode::Argument, "PoolManifest: synthetic entry lacks provenance: " + e.id);
  }
  if (!(r_real > 0.0 && r_real <= 1.0))
    fail(ErrorCode::Argument, "PoolManifest: r_real must be in (0,1]");
}

void save_manifest(const PoolManifest& m, const std::string& path) {
  m.validate();
  const PoolCounts c = m.counts();
  json j;
  j["schema_version"] = 1;
  j["seed"] = m.seed;
  j["r_real"] = m.r_real;
  j["counts"] = {{"real", c.real}, {"spatial_aug", c.spatial_aug}, {"semantic_aug", c.semantic_aug}};
  auto& arr = j["entries"] = json::array();
  for (const auto& e : m.entries) {
    json je{{"id", e.id},
            {"kind", to_string(e.kind)},
            {"image", e.image_path},
            {"mask", e.mask_path}};
    if (e.provenance) {
      je["provenance"] = {{"source_ids", e.provenance->source_ids},
                          {"seed", e.provenance->seed},
                          {"config_hash", e.provenance->config_hash}};
      if (e.provenance->mix_w1 >= 0.0) je["provenance"]["mix_w1"] = e.provenance->mix_w1;
    }
    arr.push_back(std::move(je));
  }
  std::ofstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) fail(ErrorCode::Io, "write failed: " + path);
}

PoolManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, "manifest parse error: " + std::string(e.what()));
  }
  if (j.value("schema_version", 0) != 1)
    fail(ErrorCode::Format, "unsupported manifest schema version");
  PoolManifest m;
  m.seed = j.value("seed", std::uint64_t{0});
  m.r_real = j.value("r_real", 0.5);
  for (const auto& je : j.at("entries")) {
    SampleEntry e;
    e.id = je.at("id").get<std::string>();
    e.kind = sample_kind_from_string(je.at("kind").get<std::string>());
    e.image_path = je.at("image").get<std::string>();
    e.mask_path = je.at("mask").get<std::string>();
    if (je.contains("provenance")) {
      Provenance p;
      const auto& jp = je.at("provenance");
      p.source_ids = jp.at("source_ids").get<std::vector<std::string>>();
      p.seed = jp.value("seed", std::uint64_t{0});
      p.config_hash = jp.value("config_hash", "");
      p.mix_w1 = jp.value("mix_w1", -1.0);
      e.provenance = std::move(p);
    }
    m.entries.push_back(std::move(e));
  }
  m.validate();
  // Stored counts must agree with the entry tallies.
  if (j.contains("counts")) {
    const PoolCounts c = m.counts();
    if (j["counts"].value("real", std::size_t{0}) != c.real ||
        j["counts"].value("spatial_aug", std::size_t{0}) != c.spatial_aug ||
        j["counts"].value("semantic_aug", std::size_t{0}) != c.semantic_aug)
      fail(ErrorCode::Format, "manifest counts disagree with entries");
  }
  return m;
}

namespace {

struct LoadedCase {
  Volume image;
  LabelMask mask;
};

class CaseCache {
public:
  const LoadedCase& tumor(const CaseRef& ref) {
    auto it = cases_.find(ref.id);
    if (it != cases_.end()) return it->second;
    LoadedCase c{read_nifti_volume(ref.image), read_nifti_mask(ref.mask)};
    if (!c.image.grid.same_geometry(c.mask.grid))
      fail(ErrorCode::Argument, "case " + ref.id + ": image/mask geometry mismatch");
    return cases_.emplace(ref.id, std::move(c)).first->second;
  }

  // Healthy cases: mask path optional; heuristic brain mask otherwise.
  const LoadedCase& healthy(const CaseRef& ref) {
    auto it = cases_.find(ref.id);
    if (it != cases_.end()) return it->second;
    Volume img = read_nifti_volume(ref.image);
    LabelMask brain = ref.mask.empty() ? estimate_brain_mask(img) : read_nifti_mask(ref.mask);
    return cases_.emplace(ref.id, LoadedCase{std::move(img), std::move(brain)}).first->second;
  }

private:
  std::map<std::string, LoadedCase> cases_;
};

std::string entry_file(const std::string& dir, const std::string& id, const char* what) {
  return dir + "/" + id + "_" + what + ".nii.gz";
}

}  // namespace

std::vector<SampleEntry> build_spatial_pool(const std::vector<CaseRef>& tumor_cases, int k_spatial,
                                            const BetaSampler& sampler,
                                            const RegistrationConfig& cfg,
                                            const std::string& output_dir,
                                            std::vector<std::string>* skip_log) {
  if (tumor_cases.size() < 3)
    fail(ErrorCode::Argument, "build_spatial_pool: need >= 3 tumor cases (2 distinct targets)");
  if (k_spatial < 1) fail(ErrorCode::Argument, "build_spatial_pool: k_spatial must be >= 1");
  cfg.validate();
  std::filesystem::create_directories(output_dir);

  const std::string cfg_hash = config_hash(json(cfg));
  CaseCache cache;
  std::map<std::string, VelocityFieldModel> pair_models;

  // Per-pair training seed depends only on (cfg seed, pair), so a cached
  // model equals a freshly trained one and rebuilds are reproducible.
  auto pair_model = [&](const CaseRef& src, const CaseRef& tgt) -> const VelocityFieldModel& {
    const std::string key = src.id + "->" + tgt.id;
    auto it = pair_models.find(key);
    if (it != pair_models.end()) return it->second;
    RegistrationConfig pair_cfg = cfg;
    pair_cfg.seed = derive_seed(cfg.seed, key);
    TrainResult r = train_registration(cache.tumor(src).image, cache.tumor(tgt).image, pair_cfg);
    return pair_models.emplace(key, std::move(r.model)).first->second;
  };

  std::vector<SampleEntry> entries;
  const std::size_t n = tumor_cases.size();
  for (std::size_t i = 0; i < n; ++i) {
    const CaseRef& src = tumor_cases[i];
    for (int v = 0; v < k_spatial; ++v) {
      const std::uint64_t entry_seed = derive_seed(sampler.seed(), src.id, v);
      Rng rng(entry_seed);
      // Two distinct targets, both different from the source.
      std::size_t t1 = rng.uniform_int(n - 1);
      if (t1 >= i) ++t1;
      std::size_t t2 = rng.uniform_int(n - 2);
      for (std::size_t taken : {std::min(i, t1), std::max(i, t1)})
        if (t2 >= taken) ++t2;
      BetaSampler beta(derive_seed(entry_seed, "mix-weight"));
      const MixWeights w = sample_mix_weights(beta);

      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "%03d", v);
      SampleEntry e;
      e.id = "spatial__" + src.id + "__" + suffix;
      e.kind = SampleKind::SpatialAug;
      try {
        const VelocityFieldModel& m1 = pair_model(src, tumor_cases[t1]);
        const VelocityFieldModel& m2 = pair_model(src, tumor_cases[t2]);
        const LoadedCase& sc = cache.tumor(src);
        const DeformationField field =
            integrate_mixed(m1, m2, w, sc.image.grid, cfg.steps);
        auto [img, mask] = apply_deformation(sc.image, sc.mask, field);
        e.image_path = entry_file(output_dir, e.id, "img");
        e.mask_path = entry_file(output_dir, e.id, "mask");
        write_nifti(img, e.image_path);
        write_nifti(mask, e.mask_path);
        Provenance p;
        p.source_ids = {src.id, tumor_cases[t1].id, tumor_cases[t2].id};
        p.mix_w1 = w.w1;
        p.seed = entry_seed;
        p.config_hash = cfg_hash;
        e.provenance = std::move(p);
        entries.push_back(std::move(e));
      } catch (const Error& err) {
        if (skip_log)
          skip_log->push_back(e.id + ": " + err.what());
      }
    }
  }
  return entries;
}

std::vector<SampleEntry> build_semantic_pool(const std::vector<CaseRef>& tumor_cases,
                                             const std::vector<CaseRef>& healthy_cases,
                                             int k_semantic, const InjectionConfig& cfg,
                                             const std::string& output_dir,
                                             std::vector<std::string>* skip_log) {
  if (tumor_cases.empty() || healthy_cases.empty())
    fail(ErrorCode::Argument, "build_semantic_pool: both case lists must be nonempty");
  if (k_semantic < 1) fail(ErrorCode::Argument, "build_semantic_pool: k_semantic must be >= 1");
  cfg.validate();
  std::filesystem::create_directories(output_dir);

  const std::string cfg_hash = config_hash(json(cfg));
  CaseCache cache;
  std::vector<SampleEntry> entries;
  for (const CaseRef& h : healthy_cases) {
    for (int v = 0; v < k_semantic; ++v) {
      const std::uint64_t entry_seed = derive_seed(cfg.seed, h.id, v);
      Rng rng(entry_seed);
      const CaseRef& lesion = tumor_cases[rng.uniform_int(tumor_cases.size())];

      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "%03d", v);
      SampleEntry e;
      e.id = "semantic__" + h.id + "__" + suffix;
      e.kind = SampleKind::SemanticAug;
      try {
        const LoadedCase& lc = cache.tumor(lesion);
        const LoadedCase& hc = cache.healthy(h);
        InjectionConfig entry_cfg = cfg;
        entry_cfg.seed = derive_seed(entry_seed, "jitter-stream");
        const InjectionResult r =
            inject_lesion(lc.image, lc.mask, hc.image, hc.mask, entry_cfg);
        e.image_path = entry_file(output_dir, e.id, "img");
        e.mask_path = entry_file(output_dir, e.id, "mask");
        write_nifti(r.image, e.image_path);
        write_nifti(r.mask, e.mask_path);
        Provenance p;
        p.source_ids = {h.id, lesion.id};
        p.seed = entry_cfg.seed;
        p.config_hash = cfg_hash;
        e.provenance = std::move(p);
        entries.push_back(std::move(e));
      } catch (const Error& err) {
        if (skip_log)
          skip_log->push_back(e.id + ": " + err.what());
      }
    }
  }
  return entries;
}

std::vector<SampleEntry> sample_batch(const PoolManifest& manifest, int batch_size, Rng& rng) {
  if (batch_size < 1) fail(ErrorCode::Argument, "sample_batch: batch_size must be >= 1");
  manifest.validate();
  std::vector<const SampleEntry*> real, synthetic;
  for (const auto& e : manifest.entries)
    (e.kind == SampleKind::Real ? real : synthetic).push_back(&e);

  const int quota_real =
      static_cast<int>(std::floor(batch_size * manifest.r_real + 0.5));  // half-up
  const int quota_syn = batch_size - quota_real;
  if (quota_real > 0 && real.empty())
    fail(ErrorCode::Argument, "sample_batch: real stratum empty but quota nonzero");
  if (quota_syn > 0 && synthetic.empty())
    fail(ErrorCode::Argument, "sample_batch: synthetic stratum empty but quota nonzero");

  std::vector<SampleEntry> batch;
  batch.reserve(batch_size);
  for (int i = 0; i < quota_real; ++i) batch.push_back(*real[rng.uniform_int(real.size())]);
  for (int i = 0; i < quota_syn; ++i)
    batch.push_back(*synthetic[rng.uniform_int(synthetic.size())]);
  // Fisher-Yates so strata are interleaved.
  for (int i = batch_size - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(batch[i], batch[j]);
  }
  return batch;
}

}  // namespace voxaug
