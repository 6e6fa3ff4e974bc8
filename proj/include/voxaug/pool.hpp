#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxaug/inject.hpp"
#include "voxaug/mixing.hpp"
#include "voxaug/rng.hpp"
#include "voxaug/train.hpp"

namespace voxaug {

// A case on disk. `mask` is the tumor mask for tumor cases and the brain
// mask for healthy cases (empty string: estimate heuristically).
struct CaseRef {
  std::string id;
  std::string image;
  std::string mask;
};

enum class SampleKind { Real, SpatialAug, SemanticAug };

std::string to_string(SampleKind k);
SampleKind sample_kind_from_string(const std::string& s);

struct Provenance {
  std::vector<std::string> source_ids;  // spatial: {src, tgt1, tgt2}; semantic: {healthy, lesion}
  double mix_w1 = -1.0;                 // spatial entries only
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct SampleEntry {
  std::string id;
  SampleKind kind = SampleKind::Real;
  std::string image_path;
  std::string mask_path;
  std::optional<Provenance> provenance;  // absent on real entries
};

struct PoolCounts {
  std::size_t real = 0;
  std::size_t spatial_aug = 0;
  std::size_t semantic_aug = 0;
};

struct PoolManifest {
  std::uint64_t seed = 0;
  double r_real = 0.5;
  std::vector<SampleEntry> entries;

  PoolCounts counts() const;
  void validate() const;  // unique ids, real entries carry no provenance
};

void save_manifest(const PoolManifest& m, const std::string& path);
PoolManifest load_manifest(const std::string& path);

// Spatial pool: per source, k_spatial variants, each from two distinct
// targets (both != source), per-pair cached velocity model training and a
// Beta(2,2) mixing weight. Failed registrations are skipped and logged,
// never fatal. Outputs are written under output_dir.
std::vector<SampleEntry> build_spatial_pool(const std::vector<CaseRef>& tumor_cases, int k_spatial,
                                            const BetaSampler& sampler,
                                            const RegistrationConfig& cfg,
                                            const std::string& output_dir,
                                            std::vector<std::string>* skip_log = nullptr);

// Semantic pool: per healthy case, k_semantic injections with independently
// drawn lesion cases and fresh jitter seeds. Placement failures are skipped
// and logged.
std::vector<SampleEntry> build_semantic_pool(const std::vector<CaseRef>& tumor_cases,
                                             const std::vector<CaseRef>& healthy_cases,
                                             int k_semantic, const InjectionConfig& cfg,
                                             const std::string& output_dir,
                                             std::vector<std::string>* skip_log = nullptr);

// Stratified batch: exactly round(B * r_real) real entries (half-up) and the
// remainder drawn uniformly over the synthetic union, with replacement,
// shuffled. The quota holds per batch, not in expectation.
std::vector<SampleEntry> sample_batch(const PoolManifest& manifest, int batch_size, Rng& rng);

}  // namespace voxaug
