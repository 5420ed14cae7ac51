// smlm3d: simulation, localization and phase-mask co-design for 3D
// single-molecule localization microscopy.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "commands.hpp"
#include "smlm3d/common.hpp"

int main(int argc, char** argv) {
  using namespace smlm3d;
  using namespace smlm3d::cli;

  CLI::App app{"3D localization microscopy simulator, localizer and "
               "phase-mask co-design tool"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON configuration file")
      ->envname("SMLM3D_CONFIG");
  app.add_option("--out", g.out_dir, "output directory")->envname("SMLM3D_OUT");
  app.add_option("--seed", g.seed, "seed override (defaults to the config seed)")
      ->envname("SMLM3D_SEED")
      ->each([&g](const std::string&) { g.seed_set = true; });
  app.add_option("--threads", g.threads, "worker threads (frame-parallel)")
      ->envname("SMLM3D_THREADS");
  app.fallthrough();

  app.add_subcommand("simulate",
                     "synthesize scenes, frames and ground truth");

  std::string dataset, method = "mp", checkpoint;
  double peak_threshold = 0.0;
  auto* localize = app.add_subcommand("localize", "recover 3D positions");
  localize->add_option("--dataset", dataset, "dataset directory")->required();
  localize->add_option("--method", method, "mp | decoder");
  localize->add_option("--checkpoint", checkpoint,
                       "decoder checkpoint directory");
  localize->add_option("--peak-threshold", peak_threshold,
                       "decoder grid threshold override");

  std::string gt_csv, pred_csv;
  double threshold_nm = 150.0, density = 0.0;
  bool lateral_only = false;
  auto* evaluate = app.add_subcommand("evaluate", "match and score recoveries");
  evaluate->add_option("--gt", gt_csv, "ground-truth CSV")->required();
  evaluate->add_option("--pred", pred_csv, "recovered CSV")->required();
  evaluate->add_option("--threshold", threshold_nm, "match gate, nm");
  evaluate->add_flag("--lateral-only", lateral_only,
                     "gate on lateral distance only");
  evaluate->add_option("--density", density, "density column value, /um^2");

  app.add_subcommand("learn-psf",
                     "jointly optimize the phase mask and decoder");
  app.add_subcommand("gradcheck",
                     "finite-difference audit of every gradient path");
  app.add_subcommand("crlb", "single-emitter bound sweep over z");

  std::string loc_csv, render_dataset, colormap_path;
  bool regenerate = false;
  auto* render = app.add_subcommand("render", "average-shifted-histogram "
                                              "rendering / regeneration");
  render->add_option("--loc", loc_csv, "localization CSV")->required();
  render->add_flag("--regenerate", regenerate,
                   "re-render the low-resolution frames instead");
  render->add_option("--dataset", render_dataset,
                     "dataset directory (for --regenerate)");
  render->add_option("--colormap", colormap_path, "256-entry r,g,b CSV");

  std::string bench_method = "mp", bench_checkpoint;
  auto* bench = app.add_subcommand(
      "benchmark", "density sweep: simulate, localize, evaluate");
  bench->add_option("--method", bench_method, "mp | decoder");
  bench->add_option("--checkpoint", bench_checkpoint,
                    "decoder checkpoint directory");

  try {
    app.parse(argc, argv);
    if (app.got_subcommand("simulate")) return cmd_simulate(g);
    if (app.got_subcommand(localize)) {
      return cmd_localize(g, dataset, method, checkpoint, peak_threshold);
    }
    if (app.got_subcommand(evaluate)) {
      return cmd_evaluate(g, gt_csv, pred_csv, threshold_nm, lateral_only,
                          density);
    }
    if (app.got_subcommand("learn-psf")) return cmd_learn_psf(g);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(g);
    if (app.got_subcommand("crlb")) return cmd_crlb(g);
    if (app.got_subcommand(render)) {
      return cmd_render(g, loc_csv, render_dataset, regenerate, colormap_path);
    }
    if (app.got_subcommand(bench)) {
      return cmd_benchmark(g, bench_method, bench_checkpoint);
    }
    std::fprintf(stderr, "%s\n", app.help().c_str());
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      (void)app.exit(e);
      return 0;
    }
    std::fprintf(stderr, "error: %s\n\n%s\n", e.what(), app.help().c_str());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n\n%s\n", e.what(), app.help().c_str());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::bad_alloc&) {
    std::fprintf(stderr, "error: out of memory\n");
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
