// mbgdd: phantom / degrade / train / fuse / inpaint / eval
#include <CLI11.hpp>

#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include "mbgdd/mbgdd.hpp"

using namespace mbgdd;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PhantomArgs {
  std::string out;
  int height = 64, width = 64, bands = 31, endmembers = 4;
  std::uint64_t seed = 0;
};

struct DegradeArgs {
  std::string ref, task = "fusion", preset, srf = "avg", mask_bands, out_hs, out_hr, out_mask;
  int blur_size = 5, factor = 4, stripe_bands = 0;
  double blur_sigma = 2.0, snr_hs = std::numeric_limits<double>::infinity(),
         snr_hr = std::numeric_limits<double>::infinity(), mask_pixels = 1.0, stripe_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct RunArgs {
  std::string hs, hr, mask, task, decoder, config, model, out, trace, loss, srf;
  std::optional<int> blur_size;
  std::optional<double> blur_sigma;
};

struct EvalArgs {
  std::string ref, est, out;
  double ratio = 1.0;
};

void apply_preset(DegradeArgs& a, CLI::App& cmd) {
  auto unset = [&](const char* flag) { return cmd.count(flag) == 0; };
  if (a.preset.empty()) return;
  if (a.preset == "pavia") {
    if (unset("--task")) a.task = "fusion";
    if (unset("--blur-size")) a.blur_size = 5;
    if (unset("--blur-sigma")) a.blur_sigma = 2.0;
    if (unset("--factor")) a.factor = 5;
    if (unset("--srf")) a.srf = "avg";
    if (unset("--snr-hs")) a.snr_hs = 35.0;
    if (unset("--snr-hr")) a.snr_hr = 30.0;
  } else if (a.preset == "moffett") {
    if (unset("--task")) a.task = "fusion";
    if (unset("--blur-size")) a.blur_size = 7;
    if (unset("--blur-sigma")) a.blur_sigma = 2.0;
    if (unset("--factor")) a.factor = 7;
    if (unset("--srf")) a.srf = "band-range 1:41";
    if (unset("--snr-hs")) a.snr_hs = 30.0;
    if (unset("--snr-hr")) a.snr_hr = 35.0;
  } else if (a.preset == "ugr") {
    if (unset("--task")) a.task = "inpainting";
    if (unset("--srf")) a.srf = "rgb";
    if (unset("--stripe-bands")) a.stripe_bands = 25;
  } else if (a.preset == "fru") {
    if (unset("--task")) a.task = "inpainting";
    if (unset("--srf")) a.srf = "rgb";
    if (unset("--mask-pixels")) a.mask_pixels = 0.05;
  } else {
    throw UsageError("unknown preset '" + a.preset + "' (pavia, moffett, ugr, fru)");
  }
}

int run_phantom(const PhantomArgs& a) {
  PhantomSpec spec{a.height, a.width, a.bands, a.endmembers, a.seed, 0};
  write_cube(a.out, make_phantom(spec));
  return 0;
}

int run_degrade(DegradeArgs a, CLI::App& cmd) {
  apply_preset(a, cmd);
  const Task task = parse_task(a.task);
  const ImageCube ref = read_cube(a.ref);
  if (task == Task::inpainting && cmd.count("--factor") && a.factor != 1)
    throw UsageError("--factor must be 1 for inpainting");

  std::optional<EntryMask> mask;
  if (task == Task::inpainting) {
    std::vector<std::uint8_t> kept(static_cast<std::size_t>(ref.bands()) * ref.pixels(), 1);
    if (a.mask_pixels < 1.0) {
      const PixelMask pm = random_pixel_mask(ref.height(), ref.width(), a.mask_pixels, a.seed);
      for (int b = 0; b < ref.bands(); ++b)
        for (int n = 0; n < ref.pixels(); ++n) kept[static_cast<std::size_t>(b) * ref.pixels() + n] &= pm.kept[n];
    }
    if (!a.mask_bands.empty()) {
      const ImageCube bm = read_cube(a.mask_bands);
      if (bm.bands() != ref.bands() || bm.pixels() != 1)
        throw DimensionError("--mask-bands must be a 1x1 cube with one 0/1 value per band");
      for (int b = 0; b < ref.bands(); ++b)
        if (bm.at(b, 0) == 0.0)
          for (int n = 0; n < ref.pixels(); ++n) kept[static_cast<std::size_t>(b) * ref.pixels() + n] = 0;
    }
    if (a.stripe_bands > 0) {
      const EntryMask stripes = stripe_mask(ref.height(), ref.width(), ref.bands(),
                                            std::min(a.stripe_bands, ref.bands()), a.stripe_fraction, a.seed);
      for (std::size_t i = 0; i < kept.size(); ++i) kept[i] &= stripes.kept[i];
    }
    mask = EntryMask(ref.height(), ref.width(), ref.bands(), std::move(kept));
  } else if (cmd.count("--mask-pixels") || !a.mask_bands.empty() || a.stripe_bands > 0) {
    throw UsageError("masks apply to --task inpainting only");
  }

  const int blur_size = task == Task::inpainting ? 1 : a.blur_size;
  const int factor = task == Task::inpainting ? 1 : a.factor;
  DegradationModel model{BlurOperator(gaussian_kernel(blur_size, a.blur_sigma), ref.height(), ref.width()),
                         Downsampler{factor},
                         srf_from_string(a.srf, ref.bands()),
                         a.snr_hs,
                         a.snr_hr,
                         mask,
                         a.seed};
  const ObservationSet obs = degrade(ref, model);
  write_cube(a.out_hs, obs.hs);
  write_cube(a.out_hr, obs.hr);
  if (obs.mask) {
    if (a.out_mask.empty()) throw UsageError("--out-mask is required for inpainting");
    write_mask(a.out_mask, *obs.mask);
  }
  return 0;
}

RunConfig load_config(const RunArgs& a, std::optional<Task> forced_task) {
  RunConfig cfg;
  if (!a.config.empty()) {
    cfg = read_config(a.config);
  } else if (forced_task || !a.task.empty()) {
    Json doc;
    doc["task"] = forced_task ? to_string(*forced_task) : a.task;
    cfg = parse_config(doc);
  }
  if (forced_task && cfg.task != *forced_task) {
    if (!a.config.empty()) throw UsageError("config task does not match the command");
    cfg.task = *forced_task;
  }
  if (!a.task.empty()) {
    const Task t = parse_task(a.task);
    if (!a.config.empty() && t != cfg.task) throw UsageError("--task contradicts the config file");
    cfg.task = t;
  }
  if (!a.decoder.empty()) cfg.decoder = parse_decoder(a.decoder);
  if (!a.srf.empty()) cfg.degradation.srf = a.srf;
  if (a.blur_size) cfg.degradation.blur_size = *a.blur_size;
  if (a.blur_sigma) cfg.degradation.blur_sigma = *a.blur_sigma;
  validate(cfg);
  return cfg;
}

ObservationSet load_observations(const RunArgs& a, RunConfig& cfg) {
  if (a.hs.empty()) throw UsageError("--hs is required");
  if (a.hr.empty()) throw UsageError("--hr is required (the decoder is guided by the high-resolution image)");
  ObservationSet obs{read_cube(a.hs), read_cube(a.hr), std::nullopt};
  if (!a.mask.empty()) obs.mask = read_mask(a.mask);
  if (cfg.task == Task::fusion) {
    if (obs.mask) throw UsageError("--mask applies to inpainting only");
    if (obs.hs.height() == 0 || obs.hr.height() % obs.hs.height() != 0)
      throw DimensionError("hr height must be a multiple of hs height");
    cfg.degradation.factor = obs.hr.height() / obs.hs.height();
  }
  obs.validate();
  return obs;
}

int run_train(const RunArgs& a) {
  RunConfig cfg = load_config(a, std::nullopt);
  if (a.model.empty()) throw UsageError("--out-model is required");
  const ObservationSet obs = load_observations(a, cfg);
  const SpectralBasis basis = basis_for(obs, cfg.subspace_dim);
  const auto problem = make_problem(obs, cfg, basis);
  const DecoderBundle bundle = train_decoder(obs, *problem, basis, cfg);
  write_checkpoint(a.model, checkpoint_of(bundle));
  write_loss_trace(a.loss.empty() ? a.model + ".loss.csv" : a.loss, bundle.loss_trace);
  std::cout << "trained " << to_string(cfg.decoder) << " decoder: " << bundle.loss_trace.size() << " loss values, final "
            << (bundle.loss_trace.empty() ? 0.0 : bundle.loss_trace.back()) << "\n";
  return 0;
}

int run_solve(const RunArgs& a, Task task) {
  RunConfig cfg = load_config(a, task);
  if (a.model.empty()) throw UsageError("--model is required");
  if (a.out.empty()) throw UsageError("--out is required");
  const ObservationSet obs = load_observations(a, cfg);
  const SpectralBasis basis = basis_for(obs, cfg.subspace_dim);
  const auto problem = make_problem(obs, cfg, basis);
  const DecoderBundle bundle = bundle_from_checkpoint(read_checkpoint(a.model), obs, basis, cfg);
  const AdmmResult res = admm_solve(*problem, *bundle.generator, bundle.z0, cfg.admm_settings());
  write_cube(a.out, res.estimate);
  if (!a.trace.empty()) write_admm_trace(a.trace, res.trace);
  std::cout << "admm: " << res.trace.size() << " iterations";
  if (!res.trace.empty()) std::cout << ", final primal residual " << res.trace.back().primal_residual;
  std::cout << "\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  if (!(a.ratio > 0.0)) throw UsageError("--ratio must be > 0");
  const MetricReport m = compute_metrics(read_cube(a.ref), read_cube(a.est), a.ratio);
  if (a.out.empty())
    std::cout << report_to_json(m).dump(2) << "\n";
  else
    write_report(a.out, m);
  return 0;
}

void add_run_flags(CLI::App* cmd, RunArgs& a, bool training) {
  cmd->add_option("--hs", a.hs, "hyperspectral observation (MBC)");
  cmd->add_option("--hr", a.hr, "high-resolution guidance image (MBC)");
  cmd->add_option("--mask", a.mask, "observation mask of hs (MBC 0/1 cube)");
  cmd->add_option("--config", a.config, "JSON run configuration");
  cmd->add_option("--srf", a.srf, "spectral response: avg | rgb | band-range a:b | file");
  cmd->add_option("--blur-size", a.blur_size, "Gaussian blur size (fusion)");
  cmd->add_option("--blur-sigma", a.blur_sigma, "Gaussian blur sigma (fusion)");
  if (training) {
    cmd->add_option("--task", a.task, "fusion | inpainting")->check(CLI::IsMember({"fusion", "inpainting"}));
    cmd->add_option("--decoder", a.decoder, "gdd | vae")->check(CLI::IsMember({"gdd", "vae"}));
    cmd->add_option("--out-model", a.model, "checkpoint to write")->required();
    cmd->add_option("--loss", a.loss, "loss CSV (default <out-model>.loss.csv)");
  } else {
    cmd->add_option("--model", a.model, "trained decoder checkpoint")->required();
    cmd->add_option("--out", a.out, "estimate to write (MBC)")->required();
    cmd->add_option("--trace", a.trace, "ADMM trace CSV");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiband image fusion and inpainting with a guided deep decoder prior"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "write a synthetic reference cube");
  phantom->add_option("--out", pa.out, "output cube")->required();
  phantom->add_option("--height", pa.height, "rows")->check(CLI::PositiveNumber);
  phantom->add_option("--width", pa.width, "columns")->check(CLI::PositiveNumber);
  phantom->add_option("--bands", pa.bands, "bands")->check(CLI::PositiveNumber);
  phantom->add_option("--endmembers", pa.endmembers, "number of endmembers")->check(CLI::PositiveNumber);
  phantom->add_option("--seed", pa.seed, "seed");

  DegradeArgs da;
  auto* deg = app.add_subcommand("degrade", "synthesize observations from a reference cube");
  deg->add_option("--ref", da.ref, "reference cube")->required();
  deg->add_option("--preset", da.preset, "pavia | moffett | ugr | fru");
  deg->add_option("--task", da.task, "fusion | inpainting")->check(CLI::IsMember({"fusion", "inpainting"}));
  deg->add_option("--blur-size", da.blur_size, "Gaussian kernel size (odd)");
  deg->add_option("--blur-sigma", da.blur_sigma, "Gaussian kernel sigma");
  deg->add_option("--factor", da.factor, "downsampling factor")->check(CLI::PositiveNumber);
  deg->add_option("--srf", da.srf, "avg | rgb | band-range a:b | file");
  deg->add_option("--snr-hs", da.snr_hs, "SNR of hs in dB (default: no noise)");
  deg->add_option("--snr-hr", da.snr_hr, "SNR of hr in dB (default: no noise)");
  deg->add_option("--mask-pixels", da.mask_pixels, "fraction of kept pixels")->check(CLI::Range(0.0, 1.0));
  deg->add_option("--mask-bands", da.mask_bands, "1x1xB 0/1 cube of kept bands");
  deg->add_option("--stripe-bands", da.stripe_bands, "bands with dead columns")->check(CLI::NonNegativeNumber);
  deg->add_option("--stripe-fraction", da.stripe_fraction, "dead column fraction")->check(CLI::Range(0.0, 1.0));
  deg->add_option("--seed", da.seed, "seed");
  deg->add_option("--out-hs", da.out_hs, "hs output")->required();
  deg->add_option("--out-hr", da.out_hr, "hr output")->required();
  deg->add_option("--out-mask", da.out_mask, "mask output (inpainting)");

  RunArgs ta, fa, ia;
  auto* train = app.add_subcommand("train", "train the decoder D(.)");
  add_run_flags(train, ta, true);
  auto* fuse = app.add_subcommand("fuse", "ADMM fusion with a trained decoder");
  add_run_flags(fuse, fa, false);
  auto* inpaint = app.add_subcommand("inpaint", "ADMM inpainting with a trained decoder");
  add_run_flags(inpaint, ia, false);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "quality metrics of an estimate");
  eval->add_option("--ref", ea.ref, "reference cube")->required();
  eval->add_option("--est", ea.est, "estimated cube")->required();
  eval->add_option("--ratio", ea.ratio, "ERGAS resolution ratio");
  eval->add_option("--out", ea.out, "JSON report (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*phantom) return run_phantom(pa);
    if (*deg) return run_degrade(da, *deg);
    if (*train) return run_train(ta);
    if (*fuse) return run_solve(fa, Task::fusion);
    if (*inpaint) return run_solve(ia, Task::inpainting);
    if (*eval) return run_eval(ea);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
