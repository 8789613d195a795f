#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sspain/rng.hpp"
#include "sspain/tensor.hpp"

namespace sspain {

// One aligned face crop with its labels. au_values and landmarks are indexed
// like Dataset::au_ids.
struct Frame {
    std::string subject_id;
    std::string frame_id;
    Tensor image;  // [1,H,W], values in [0,1]
    double pspi = 0.0;
    int level = 0;
    std::vector<double> au_values;              // each in [0,5]
    std::vector<std::pair<int, int>> landmarks;  // (x,y) pixel coords, one per AU
};

struct Dataset {
    std::vector<Frame> frames;
    std::vector<std::string> subjects;
    std::vector<int> au_ids;
};

// Lower pspi bound of each level 0..5; strictly increasing, first entry 0.
using RescaleTable = std::vector<double>;

const RescaleTable& default_rescale_table();  // {0,1,2,3,4,6}

// Map a pspi score in [0,15] onto a discrete level 0..5 (largest level whose
// lower bound does not exceed pspi).
int rescale_pain(double pspi, const RescaleTable& table = default_rescale_table());

struct SynthConfig {
    int image_size = 32;
    int n_subjects = 6;
    int frames_per_subject = 200;
    std::vector<int> relevant_au_ids = {1, 4, 7, 10};
    double noise_sigma = 0.05;
    std::uint64_t seed = 7;
};

// The synthetic corpus always carries these ten AUs.
const std::vector<int>& synthetic_au_ids();  // {1..10}

// Fixed landmark grid (x,y) for a square image of the given size, one entry
// per synthetic AU, spaced so 11x11 patches do not swallow neighboring blobs.
std::vector<std::pair<int, int>> synthetic_landmark_grid(int image_size);

// Gaussian background noise plus one isotropic blob per AU (peak value/5,
// sigma scaled to image size), clamped to [0,1] and quantized to 8-bit levels
// so disk round-trips are exact.
Tensor render_synthetic_image(int image_size, const std::vector<std::pair<int, int>>& landmarks,
                              const std::vector<double>& au_values, double noise_sigma, Rng& rng);

// Deterministic toy corpus: relevant AU values track the pain level, others
// are independent noise, and every AU paints a blob at its landmark.
Dataset generate_synthetic(const SynthConfig& cfg);

// Leave-one-subject-out partition of the frames.
std::pair<Dataset, Dataset> split_loso(const Dataset& ds, const std::string& held_out);

// ---- disk layout -----------------------------------------------------------
// root/<subject>/frames/<frame_id>.pgm     binary P5, 8-bit
// root/<subject>/labels.csv                frame_id,pspi
// root/<subject>/aus.csv                   frame_id,au<id>,...
// root/<subject>/landmarks.csv             frame_id,au<id>_x,au<id>_y,...

void save_pgm(const std::string& path, const Tensor& image);
Tensor load_pgm(const std::string& path);

Dataset load_dataset(const std::string& root,
                     const RescaleTable& table = default_rescale_table());
void save_dataset(const Dataset& ds, const std::string& root);

}  // namespace sspain
