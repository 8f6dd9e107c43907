#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsnet/detector.hpp"

namespace dsnet {

// Everything the commands need, assembled from built-in defaults, then the
// config file (`key = value` lines, '#' comments), then flag overrides — in
// that order, later sources winning.
struct RunConfig {
    std::string weights;          // weight file path ("" = none)
    bool random_weights = false;  // seeded random init instead of a file
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    double score_thresh = 0.25;
    double nms_thresh = 0.45;
    bool render = false;  // detect: also write annotated images

    // model geometry
    int input_size = 416;
    int num_classes = 8;
    bool small_object_head = true;
    std::string act = "silu";
    bool scale_qk = true;
    int window = 4;
    int heads = 4;
    std::vector<float> anchors;  // optional override: 4*3 w,h pairs flattened

    // augment verb
    std::string mode = "none";
    double brightness = 1.0;
    double mixup_lambda = 0.5;
};

// One `key = value` assignment; `where` labels errors (file:line or flag
// name). Unknown keys and malformed values are rejected.
void apply_config_value(RunConfig& rc, const std::string& key, const std::string& value,
                        const std::string& where);

// Defaults overlaid with every assignment in the file.
RunConfig load_config_file(const std::string& path);

DetectorConfig to_detector_config(const RunConfig& rc);

int cmd_profile(const RunConfig& rc);
int cmd_detect(const RunConfig& rc, const std::vector<std::string>& images);
int cmd_eval(const RunConfig& rc, const std::string& gt_dir, const std::string& dets_path);
int cmd_augment(const RunConfig& rc, const std::vector<std::string>& images);
int cmd_selftest(const RunConfig& rc);

// Full argument parsing plus the exit-code contract: 0 success, 1 validation
// or I/O error, 2 internal invariant violation.
int run_cli(int argc, const char* const* argv);

}  // namespace dsnet
