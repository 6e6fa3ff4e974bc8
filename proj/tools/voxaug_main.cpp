// Command-line front door: preprocess / register / mix / inject / pool /
// sample. Every subcommand validates, delegates to the library, and writes a
// machine-readable result summary with SHA-256 digests of its outputs.
// Exit codes: 0 success, 1 validation, 2 I/O, 3 numerical failure.

#include <omp.h>

#include <CLI11.hpp>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "voxaug/config_json.hpp"
#include "voxaug/digest.hpp"
#include "voxaug/field.hpp"
#include "voxaug/inject.hpp"
#include "voxaug/mixing.hpp"
#include "voxaug/nifti.hpp"
#include "voxaug/pool.hpp"
#include "voxaug/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voxaug;

namespace {

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Argument:
    case ErrorCode::Degenerate:
      return 1;
    case ErrorCode::Format:
    case ErrorCode::Unsupported:
    case ErrorCode::Data:
    case ErrorCode::Io:
      return 2;
    case ErrorCode::Training:
    case ErrorCode::Placement:
      return 3;
  }
  return 1;
}

json output_record(const std::string& path) {
  return json{{"path", path}, {"sha256", sha256_file(path)}};
}

void write_summary(const std::string& path, const json& summary) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
  f << summary.dump(2) << "\n";
}

json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open: " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, path + ": " + e.what());
  }
}

// Shared pattern: config file first, explicit flags override it.
template <typename Cfg>
Cfg resolve_config(const std::string& config_path, const json& flag_overrides) {
  Cfg cfg{};
  if (!config_path.empty()) cfg = load_json_file(config_path).get<Cfg>();
  if (!flag_overrides.empty()) {
    json merged = json(cfg);
    merged.update(flag_overrides);
    cfg = merged.get<Cfg>();
  }
  return cfg;
}

std::string stem_of(const std::string& path) {
  std::string name = fs::path(path).filename().string();
  for (const char* suffix : {".nii.gz", ".nii"}) {
    const std::size_t n = std::strlen(suffix);
    if (name.size() > n && name.compare(name.size() - n, n, suffix) == 0)
      return name.substr(0, name.size() - n);
  }
  return fs::path(name).stem().string();
}

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
  std::vector<std::string> inputs;
  std::string out_dir;
  double spacing = 1.0;
  bool zscore = false;
  bool labels = false;
};

int cmd_preprocess(const PreprocessArgs& a) {
  fs::create_directories(a.out_dir);
  json report;
  report["schema_version"] = 1;
  report["command"] = "preprocess";
  report["spacing"] = {a.spacing, a.spacing, a.spacing};
  report["zscore"] = a.zscore;
  report["outputs"] = json::array();
  report["failures"] = json::array();

  for (const auto& input : a.inputs) {
    const std::string out_path = a.out_dir + "/" + stem_of(input) + ".nii.gz";
    try {
      if (a.labels) {
        const LabelMask mask = read_nifti_mask(input);
        const LabelMask res = resample_to_grid(mask, mask.grid.resampled_iso(a.spacing));
        write_nifti(res, out_path);
      } else {
        Volume vol = read_nifti_volume(input);
        Volume res = resample_to_grid(vol, vol.grid.resampled_iso(a.spacing), Interp::Trilinear);
        if (a.zscore) res = zscore_normalize(res);
        write_nifti(res, out_path);
      }
      json rec = output_record(out_path);
      rec["input"] = input;
      report["outputs"].push_back(rec);
    } catch (const Error& e) {
      report["failures"].push_back({{"input", input}, {"error", e.what()}});
    }
  }
  report["status"] = report["failures"].empty() ? "ok" : "partial_failure";
  write_summary(a.out_dir + "/preprocess_report.json", report);
  std::cout << report["status"].get<std::string>() << ": " << report["outputs"].size()
            << " written, " << report["failures"].size() << " failed\n";
  return report["failures"].empty() ? 0 : 2;
}

// ------------------------------------------------------------------ register

struct RegisterArgs {
  std::string src, tgt, out;
  std::string config_path;
  json flag_overrides;
};

int cmd_register(const RegisterArgs& a) {
  const auto cfg = resolve_config<RegistrationConfig>(a.config_path, a.flag_overrides);
  const Volume src = read_nifti_volume(a.src);
  const Volume tgt = read_nifti_volume(a.tgt);
  const TrainResult result = train_registration(src, tgt, cfg);
  save_model(result.model, a.out);
  write_model_sidecar(a.out, tgt.grid, cfg, result.final_loss);

  json summary;
  summary["schema_version"] = 1;
  summary["command"] = "register";
  summary["inputs"] = {{"src", a.src}, {"tgt", a.tgt}};
  summary["effective_config"] = cfg;
  summary["seed"] = cfg.seed;
  summary["initial_loss"] = result.initial_loss;
  summary["final_loss"] = result.final_loss;
  summary["outputs"] = {output_record(a.out), output_record(a.out + ".json")};
  summary["status"] = "ok";
  write_summary(a.out + ".summary.json", summary);
  std::cout << "final loss " << result.final_loss << " (from " << result.initial_loss << ")\n";
  return 0;
}

// ----------------------------------------------------------------------- mix

struct MixArgs {
  std::string model1, model2;
  std::string src_img, src_mask;
  std::string out_prefix;
  std::optional<double> w1;
  std::optional<std::uint64_t> beta_seed;
  int steps = 8;
  bool export_field = false;
};

int cmd_mix(const MixArgs& a) {
  if (a.w1.has_value() == a.beta_seed.has_value())
    fail(ErrorCode::Argument, "mix: provide exactly one of --w1 or --beta-seed");
  MixWeights w;
  std::uint64_t used_beta_seed = 0;
  if (a.w1) {
    w = MixWeights::of(*a.w1);
  } else {
    used_beta_seed = *a.beta_seed;
    BetaSampler sampler(used_beta_seed);
    w = sample_mix_weights(sampler);
  }
  const VelocityFieldModel m1 = load_model(a.model1);
  const VelocityFieldModel m2 = load_model(a.model2);
  const Volume src = read_nifti_volume(a.src_img);
  const LabelMask mask = read_nifti_mask(a.src_mask);

  const DeformationField field = integrate_mixed(m1, m2, w, src.grid, a.steps);
  auto [img_aug, mask_aug] = apply_deformation(src, mask, field);
  const std::string img_path = a.out_prefix + "_img.nii.gz";
  const std::string mask_path = a.out_prefix + "_mask.nii.gz";
  write_nifti(img_aug, img_path);
  write_nifti(mask_aug, mask_path);

  json summary;
  summary["schema_version"] = 1;
  summary["command"] = "mix";
  summary["inputs"] = {{"model1", a.model1},
                       {"model2", a.model2},
                       {"src_img", a.src_img},
                       {"src_mask", a.src_mask}};
  summary["weights"] = {{"w1", w.w1}, {"w2", w.w2}};
  if (a.beta_seed) summary["beta_seed"] = used_beta_seed;
  summary["steps"] = a.steps;
  summary["outputs"] = {output_record(img_path), output_record(mask_path)};
  if (a.export_field) {
    const std::string field_path = a.out_prefix + "_field.vf";
    write_deformation_raw(field, field_path);
    summary["outputs"].push_back(output_record(field_path));
  }
  summary["status"] = "ok";
  write_summary(a.out_prefix + "_summary.json", summary);
  std::cout << "w1=" << w.w1 << " -> " << img_path << "\n";
  return 0;
}

// -------------------------------------------------------------------- inject

struct InjectArgs {
  std::string lesion_img, lesion_mask, healthy, healthy_brain, lesion_brain;
  std::string out_prefix;
  std::string config_path;
  json flag_overrides;
};

int cmd_inject(const InjectArgs& a) {
  const auto cfg = resolve_config<InjectionConfig>(a.config_path, a.flag_overrides);
  const Volume lesion_img = read_nifti_volume(a.lesion_img);
  const LabelMask lesion_mask = read_nifti_mask(a.lesion_mask);
  const Volume healthy = read_nifti_volume(a.healthy);
  const LabelMask healthy_brain = read_nifti_mask(a.healthy_brain);
  std::optional<LabelMask> lesion_brain;
  if (!a.lesion_brain.empty()) lesion_brain = read_nifti_mask(a.lesion_brain);

  const InjectionResult result = inject_lesion(lesion_img, lesion_mask, healthy, healthy_brain,
                                               cfg, lesion_brain ? &*lesion_brain : nullptr);
  const std::string img_path = a.out_prefix + "_img.nii.gz";
  const std::string mask_path = a.out_prefix + "_mask.nii.gz";
  const std::string xf_path = a.out_prefix + "_transform.txt";
  write_nifti(result.image, img_path);
  write_nifti(result.mask, mask_path);
  write_transform_text(result.alignment, xf_path);

  json summary;
  summary["schema_version"] = 1;
  summary["command"] = "inject";
  summary["inputs"] = {{"lesion_img", a.lesion_img},
                       {"lesion_mask", a.lesion_mask},
                       {"healthy", a.healthy},
                       {"healthy_brain", a.healthy_brain}};
  if (!a.lesion_brain.empty()) summary["inputs"]["lesion_brain"] = a.lesion_brain;
  summary["effective_config"] = cfg;
  summary["seed"] = cfg.seed;
  summary["mi_final"] = result.mi_final;
  summary["placement_attempts"] = result.placement_attempts;
  summary["outputs"] = {output_record(img_path), output_record(mask_path),
                        output_record(xf_path)};
  summary["status"] = "ok";
  write_summary(a.out_prefix + "_summary.json", summary);
  std::cout << "placed after " << result.placement_attempts << " attempt(s) -> " << img_path
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------- pool

struct PoolArgs {
  std::string config_path;
  std::string out_dir_override;
};

std::vector<CaseRef> parse_cases(const json& arr, bool mask_required, const char* what) {
  std::vector<CaseRef> cases;
  for (const auto& jc : arr) {
    CaseRef c;
    c.id = jc.at("id").get<std::string>();
    c.image = jc.at("image").get<std::string>();
    if (jc.contains("mask")) c.mask = jc.at("mask").get<std::string>();
    if (mask_required && c.mask.empty())
      fail(ErrorCode::Argument, std::string(what) + " case " + c.id + ": mask is required");
    cases.push_back(std::move(c));
  }
  return cases;
}

int cmd_pool(const PoolArgs& a) {
  const json jc = load_json_file(a.config_path);
  if (jc.value("schema_version", 0) != 1)
    fail(ErrorCode::Argument, "pool config: schema_version must be 1");

  const auto tumor = parse_cases(jc.at("tumor_cases"), true, "tumor");
  const auto healthy =
      jc.contains("healthy_cases") ? parse_cases(jc.at("healthy_cases"), false, "healthy")
                                   : std::vector<CaseRef>{};
  const std::uint64_t seed = jc.value("seed", std::uint64_t{0});
  const double r_real = jc.value("r_real", 0.5);
  const int k_spatial = jc.value("k_spatial", 0);
  const int k_semantic = jc.value("k_semantic", 0);
  const std::string out_dir = a.out_dir_override.empty()
                                  ? jc.value("output_dir", std::string("pool_out"))
                                  : a.out_dir_override;

  RegistrationConfig reg_cfg;
  if (jc.contains("registration")) reg_cfg = jc.at("registration").get<RegistrationConfig>();
  reg_cfg.seed = derive_seed(seed, "registration");
  InjectionConfig inj_cfg;
  if (jc.contains("injection")) inj_cfg = jc.at("injection").get<InjectionConfig>();
  inj_cfg.seed = derive_seed(seed, "injection");

  fs::create_directories(out_dir);
  PoolManifest manifest;
  manifest.seed = seed;
  manifest.r_real = r_real;
  for (const auto& c : tumor) {
    SampleEntry e;
    e.id = "real__" + c.id;
    e.kind = SampleKind::Real;
    e.image_path = c.image;
    e.mask_path = c.mask;
    manifest.entries.push_back(std::move(e));
  }

  std::vector<std::string> skips;
  if (k_spatial > 0) {
    BetaSampler sampler(derive_seed(seed, "mix-weights"));
    auto entries =
        build_spatial_pool(tumor, k_spatial, sampler, reg_cfg, out_dir + "/spatial", &skips);
    for (auto& e : entries) manifest.entries.push_back(std::move(e));
  }
  if (k_semantic > 0 && !healthy.empty()) {
    auto entries =
        build_semantic_pool(tumor, healthy, k_semantic, inj_cfg, out_dir + "/semantic", &skips);
    for (auto& e : entries) manifest.entries.push_back(std::move(e));
  }

  const std::string manifest_path = out_dir + "/manifest.json";
  save_manifest(manifest, manifest_path);
  if (!skips.empty()) {
    std::ofstream f(out_dir + "/skips.log");
    for (const auto& s : skips) f << s << "\n";
  }

  const PoolCounts counts = manifest.counts();
  json summary;
  summary["schema_version"] = 1;
  summary["command"] = "pool";
  summary["inputs"] = {{"config", a.config_path}};
  summary["effective_config"] = jc;
  summary["seed"] = seed;
  summary["counts"] = {{"real", counts.real},
                       {"spatial_aug", counts.spatial_aug},
                       {"semantic_aug", counts.semantic_aug}};
  summary["skips"] = skips.size();
  summary["outputs"] = {output_record(manifest_path)};
  summary["status"] = "ok";
  write_summary(out_dir + "/pool_summary.json", summary);
  std::cout << "real " << counts.real << ", spatial " << counts.spatial_aug << ", semantic "
            << counts.semantic_aug << ", skips " << skips.size() << "\n";
  return 0;
}

// -------------------------------------------------------------------- sample

struct SampleArgs {
  std::string manifest_path;
  int batch_size = 4;
  std::optional<double> r_real;
  std::uint64_t seed = 0;
  int n_batches = 1;
  std::string out_path;
};

int cmd_sample(const SampleArgs& a) {
  PoolManifest manifest = load_manifest(a.manifest_path);
  if (a.r_real) manifest.r_real = *a.r_real;
  Rng rng(a.seed);
  json out;
  out["schema_version"] = 1;
  out["command"] = "sample";
  out["manifest"] = a.manifest_path;
  out["batch_size"] = a.batch_size;
  out["r_real"] = manifest.r_real;
  out["seed"] = a.seed;
  auto& batches = out["batches"] = json::array();
  for (int b = 0; b < a.n_batches; ++b) {
    const auto batch = sample_batch(manifest, a.batch_size, rng);
    json ids = json::array();
    for (const auto& e : batch) ids.push_back(e.id);
    batches.push_back(std::move(ids));
  }
  if (a.out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    write_summary(a.out_path, out);
    std::cout << a.n_batches << " batch(es) -> " << a.out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric augmentation engine: learned diffeomorphic mixing and lesion injection"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP worker count (0: library default)");

  PreprocessArgs pre;
  auto* sp = app.add_subcommand("preprocess", "Resample to an isotropic grid, optionally z-score");
  sp->add_option("inputs", pre.inputs, "Input NIfTI files")->required()->expected(-1);
  sp->add_option("--out", pre.out_dir, "Output directory")->required();
  sp->add_option("--spacing", pre.spacing, "Isotropic spacing in mm (default 1.0)");
  sp->add_flag("--zscore", pre.zscore, "Z-score normalize after resampling");
  sp->add_flag("--labels", pre.labels, "Treat inputs as label masks (nearest neighbor)");

  RegisterArgs reg;
  auto* sr = app.add_subcommand("register", "Train a velocity-field model for src -> tgt");
  sr->add_option("--src", reg.src)->required();
  sr->add_option("--tgt", reg.tgt)->required();
  sr->add_option("--out", reg.out, "Model file path")->required();
  sr->add_option("--config", reg.config_path, "JSON RegistrationConfig");
  double reg_lambda = 0, reg_lr = 0, reg_sigma = 0;
  int reg_iters = 0, reg_batch = 0, reg_steps = 0, reg_L = 0;
  std::uint64_t reg_seed = 0;
  std::string reg_sim, reg_hidden;
  sr->add_option("--iterations", reg_iters);
  sr->add_option("--batch-size", reg_batch);
  sr->add_option("--steps", reg_steps, "Euler integration steps K");
  sr->add_option("--lambda", reg_lambda, "Velocity-gradient regularization weight");
  sr->add_option("--lr", reg_lr, "Learning rate");
  sr->add_option("--mapping-dim", reg_L, "Fourier mapping dimension L");
  sr->add_option("--sigma-b", reg_sigma, "Fourier frequency scale");
  sr->add_option("--hidden", reg_hidden, "Comma-separated hidden sizes, e.g. 128,128,128");
  sr->add_option("--seed", reg_seed);
  sr->add_option("--similarity", reg_sim, "mse or ncc");

  MixArgs mix;
  auto* sm = app.add_subcommand("mix", "Mix two velocity models and warp a source pair");
  sm->add_option("--model1", mix.model1)->required();
  sm->add_option("--model2", mix.model2)->required();
  sm->add_option("--src-img", mix.src_img)->required();
  sm->add_option("--src-mask", mix.src_mask)->required();
  sm->add_option("--out-prefix", mix.out_prefix)->required();
  double mix_w1 = 0;
  std::uint64_t mix_beta_seed = 0;
  auto* optw = sm->add_option("--w1", mix_w1, "Mixing weight for model1 in [0,1]");
  auto* optb =
      sm->add_option("--beta-seed", mix_beta_seed, "Draw w1 from Beta(2,2) with this seed");
  sm->add_option("--steps", mix.steps, "Euler integration steps K");
  sm->add_flag("--export-field", mix.export_field, "Also write the raw deformation field");

  InjectArgs inj;
  auto* si = app.add_subcommand("inject", "Inject a real lesion into a healthy background");
  si->add_option("--lesion-img", inj.lesion_img)->required();
  si->add_option("--lesion-mask", inj.lesion_mask)->required();
  si->add_option("--healthy", inj.healthy)->required();
  si->add_option("--healthy-brain", inj.healthy_brain)->required();
  si->add_option("--lesion-brain", inj.lesion_brain, "Overrides the heuristic brain mask");
  si->add_option("--out-prefix", inj.out_prefix)->required();
  si->add_option("--config", inj.config_path, "JSON InjectionConfig");
  double inj_tau = 0, inj_sigma = 0, inj_jt = 0, inj_jr = 0;
  int inj_bins = 0, inj_mi_bins = 0;
  std::uint64_t inj_seed = 0;
  si->add_option("--tau", inj_tau, "SDF transition bandwidth (voxels)");
  si->add_option("--sigma", inj_sigma, "PVE blur std (voxels)");
  si->add_option("--bins", inj_bins, "Histogram matching bins");
  si->add_option("--mi-bins", inj_mi_bins, "Mutual information bins");
  si->add_option("--jitter-trans", inj_jt, "Max placement translation (voxels)");
  si->add_option("--jitter-rot", inj_jr, "Max placement rotation (degrees)");
  si->add_option("--seed", inj_seed);

  PoolArgs pool;
  auto* spo = app.add_subcommand("pool", "Build augmentation pools and the sampling manifest");
  spo->add_option("--config", pool.config_path, "Pool JSON config")->required();
  spo->add_option("--out", pool.out_dir_override, "Override the config's output_dir");

  SampleArgs smp;
  auto* ss = app.add_subcommand("sample", "Draw stratified batches from a manifest");
  ss->add_option("--manifest", smp.manifest_path)->required();
  ss->add_option("--batch-size", smp.batch_size)->required();
  double smp_r = 0;
  auto* optr = ss->add_option("--r-real", smp_r, "Real-data fraction per batch");
  ss->add_option("--seed", smp.seed);
  ss->add_option("--n-batches", smp.n_batches);
  ss->add_option("--out", smp.out_path, "Write listing here instead of stdout");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*sp) return cmd_preprocess(pre);
    if (*sr) {
      if (sr->count("--iterations")) reg.flag_overrides["iterations"] = reg_iters;
      if (sr->count("--batch-size")) reg.flag_overrides["batch_size"] = reg_batch;
      if (sr->count("--steps")) reg.flag_overrides["steps"] = reg_steps;
      if (sr->count("--lambda")) reg.flag_overrides["reg_weight"] = reg_lambda;
      if (sr->count("--lr")) reg.flag_overrides["learning_rate"] = reg_lr;
      if (sr->count("--mapping-dim")) reg.flag_overrides["mapping_dim"] = reg_L;
      if (sr->count("--sigma-b")) reg.flag_overrides["sigma_b"] = reg_sigma;
      if (sr->count("--seed")) reg.flag_overrides["seed"] = reg_seed;
      if (sr->count("--similarity")) reg.flag_overrides["similarity"] = reg_sim;
      if (sr->count("--hidden")) {
        std::vector<int> hidden;
        std::stringstream hs(reg_hidden);
        for (std::string tok; std::getline(hs, tok, ',');) hidden.push_back(std::stoi(tok));
        reg.flag_overrides["hidden_sizes"] = hidden;
      }
      return cmd_register(reg);
    }
    if (*sm) {
      if (optw->count() > 0) mix.w1 = mix_w1;
      if (optb->count() > 0) mix.beta_seed = mix_beta_seed;
      return cmd_mix(mix);
    }
    if (*si) {
      if (si->count("--tau")) inj.flag_overrides["tau"] = inj_tau;
      if (si->count("--sigma")) inj.flag_overrides["sigma"] = inj_sigma;
      if (si->count("--bins")) inj.flag_overrides["histogram_bins"] = inj_bins;
      if (si->count("--mi-bins")) inj.flag_overrides["mi_bins"] = inj_mi_bins;
      if (si->count("--jitter-trans")) inj.flag_overrides["jitter_max_translation"] = inj_jt;
      if (si->count("--jitter-rot")) inj.flag_overrides["jitter_max_rotation_deg"] = inj_jr;
      if (si->count("--seed")) inj.flag_overrides["seed"] = inj_seed;
      return cmd_inject(inj);
    }
    if (*spo) return cmd_pool(pool);
    if (*ss) {
      if (optr->count() > 0) smp.r_real = smp_r;
      return cmd_sample(smp);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
