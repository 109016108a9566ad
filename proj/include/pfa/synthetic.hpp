#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include <opencv2/core.hpp>

namespace pfa {

// Cartoon faces whose apparent age is carried by hair graying, skin tone and
// wrinkle contrast. Everything else is fixed per identity.
struct SyntheticIdentity {
  cv::Vec3d skin, hair, background, eyes;
  double face_width = 0.0, face_height = 0.0;
  double eye_height = 0.0, eye_spacing = 0.0;
  double mouth_width = 0.0, nose_length = 0.0;
  double hair_line = 0.0;

  static SyntheticIdentity random(std::mt19937_64& rng);
};

struct SyntheticOptions {
  int identities = 60;
  int images_per_identity = 8;
  int size = 64;
  int min_age = 16;
  int max_age = 70;
  double noise = 4.0;  // pixel noise std on the 0..255 scale
  std::uint64_t seed = 7;
};

// Age in [0, 1] driving every age cue; 0 at 15 years, 1 at 75.
double synthetic_age_level(double age);

// RGB uint8 face at the given age. `rng` only drives pose jitter and noise.
cv::Mat render_face(const SyntheticIdentity& id, double age, int size, std::mt19937_64& rng, double noise = 0.0);

// Writes <root>/images/*.png and <root>/manifest.csv (id,image,age).
// Returns the number of images written.
int make_synthetic(const std::filesystem::path& root, const SyntheticOptions& options);

}  // namespace pfa
