#pragma once

#include <cstdint>
#include <string>

namespace smlm3d::cli {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;  // 0: take the config's seed (default 1)
  bool seed_set = false;
  int threads = 1;
};

int cmd_simulate(const GlobalOpts& g);
int cmd_localize(const GlobalOpts& g, const std::string& dataset,
                 const std::string& method, const std::string& checkpoint,
                 double peak_threshold);
int cmd_evaluate(const GlobalOpts& g, const std::string& gt_csv,
                 const std::string& pred_csv, double threshold_nm,
                 bool lateral_only, double density);
int cmd_learn_psf(const GlobalOpts& g);
int cmd_gradcheck(const GlobalOpts& g);
int cmd_crlb(const GlobalOpts& g);
int cmd_render(const GlobalOpts& g, const std::string& loc_csv,
               const std::string& dataset, bool regenerate,
               const std::string& colormap_path);
int cmd_benchmark(const GlobalOpts& g, const std::string& method,
                  const std::string& checkpoint);

}  // namespace smlm3d::cli
