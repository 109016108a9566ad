#include "pfa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pfa/core.hpp"

namespace pfa {

namespace fs = std::filesystem;

namespace {

cv::Vec3d lerp(const cv::Vec3d& a, const cv::Vec3d& b, double t) { return a * (1.0 - t) + b * t; }

cv::Scalar rgb(const cv::Vec3d& c) { return cv::Scalar(c[0], c[1], c[2]); }

}  // namespace

SyntheticIdentity SyntheticIdentity::random(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  static const cv::Vec3d hair_palette[] = {{40, 28, 20}, {90, 60, 35}, {200, 160, 90}, {150, 70, 30}, {20, 20, 25}};
  static const cv::Vec3d eye_palette[] = {{60, 40, 25}, {50, 90, 140}, {60, 110, 70}};
  SyntheticIdentity id;
  const double tone = u(rng);
  id.skin = lerp({245, 215, 190}, {150, 105, 75}, tone);
  id.hair = hair_palette[std::uniform_int_distribution<int>(0, 4)(rng)] + cv::Vec3d(u(rng), u(rng), u(rng)) * 15.0;
  id.eyes = eye_palette[std::uniform_int_distribution<int>(0, 2)(rng)];
  id.background = cv::Vec3d(60 + 150 * u(rng), 60 + 150 * u(rng), 60 + 150 * u(rng));
  id.face_width = 0.28 + 0.08 * u(rng);
  id.face_height = 0.36 + 0.06 * u(rng);
  id.eye_height = 0.44 + 0.04 * u(rng);
  id.eye_spacing = 0.10 + 0.05 * u(rng);
  id.mouth_width = 0.07 + 0.05 * u(rng);
  id.nose_length = 0.08 + 0.05 * u(rng);
  id.hair_line = 0.22 + 0.06 * u(rng);
  return id;
}

double synthetic_age_level(double age) { return std::clamp((age - 15.0) / 60.0, 0.0, 1.0); }

cv::Mat render_face(const SyntheticIdentity& id, double age, int size, std::mt19937_64& rng, double noise) {
  const int canvas = 4 * size;
  const double s = canvas;
  const double a = synthetic_age_level(age);
  std::uniform_real_distribution<double> jitter(-0.015, 0.015);
  const double cx = 0.5 * s + jitter(rng) * s;
  const double cy = 0.54 * s + jitter(rng) * s;

  const cv::Vec3d skin = id.skin * (1.0 - 0.22 * a);
  const cv::Vec3d hair = lerp(id.hair, {215, 215, 215}, a);
  const cv::Vec3d wrinkle = skin * (1.0 - 0.55 * a);

  cv::Mat img(canvas, canvas, CV_8UC3, rgb(id.background));
  const cv::Point center(static_cast<int>(cx), static_cast<int>(cy));
  const cv::Size axes(static_cast<int>(id.face_width * s), static_cast<int>(id.face_height * s));
  // hair behind the face, then the face, then the fringe
  cv::ellipse(img, cv::Point(center.x, center.y - static_cast<int>(0.06 * s)),
              cv::Size(axes.width + static_cast<int>(0.05 * s), axes.height + static_cast<int>(0.02 * s)), 0, 0, 360,
              rgb(hair), cv::FILLED, cv::LINE_AA);
  cv::ellipse(img, center, axes, 0, 0, 360, rgb(skin), cv::FILLED, cv::LINE_AA);
  const int top = static_cast<int>(cy - id.face_height * s);
  cv::ellipse(img, cv::Point(center.x, top + static_cast<int>(0.02 * s)),
              cv::Size(axes.width, static_cast<int>((id.hair_line - 0.12) * s)), 0, 180, 360, rgb(hair), cv::FILLED,
              cv::LINE_AA);

  const int eye_y = static_cast<int>(id.eye_height * s + (cy - 0.54 * s));
  const int eye_dx = static_cast<int>(id.eye_spacing * s);
  const int thick = std::max(1, canvas / 80);
  for (int side : {-1, 1}) {
    const cv::Point eye(center.x + side * eye_dx, eye_y);
    cv::ellipse(img, eye, cv::Size(static_cast<int>(0.045 * s), static_cast<int>(0.025 * s)), 0, 0, 360,
                cv::Scalar(245, 245, 245), cv::FILLED, cv::LINE_AA);
    cv::circle(img, eye, static_cast<int>(0.018 * s), rgb(id.eyes), cv::FILLED, cv::LINE_AA);
    cv::line(img, eye + cv::Point(-static_cast<int>(0.05 * s), -static_cast<int>(0.05 * s)),
             eye + cv::Point(static_cast<int>(0.05 * s), -static_cast<int>(0.055 * s)), rgb(hair * 0.6), thick * 2,
             cv::LINE_AA);
    // crow's feet
    for (int k = -1; k <= 1; ++k) {
      const cv::Point from = eye + cv::Point(side * static_cast<int>(0.06 * s), k * static_cast<int>(0.012 * s));
      const cv::Point to = from + cv::Point(side * static_cast<int>(0.035 * s), k * static_cast<int>(0.02 * s));
      cv::line(img, from, to, rgb(wrinkle), thick, cv::LINE_AA);
    }
  }
  // forehead lines
  const int forehead = static_cast<int>(top + (id.hair_line - 0.08) * s);
  for (int k = 0; k < 3; ++k) {
    const int y = forehead + k * static_cast<int>(0.024 * s);
    cv::ellipse(img, cv::Point(center.x, y + static_cast<int>(0.05 * s)),
                cv::Size(static_cast<int>(0.6 * axes.width), static_cast<int>(0.05 * s)), 0, 200, 340, rgb(wrinkle),
                thick, cv::LINE_AA);
  }
  const int nose_top = eye_y + static_cast<int>(0.02 * s);
  const int nose_bottom = nose_top + static_cast<int>(id.nose_length * s);
  cv::line(img, cv::Point(center.x, nose_top), cv::Point(center.x - static_cast<int>(0.015 * s), nose_bottom),
           rgb(skin * 0.75), thick, cv::LINE_AA);
  const int mouth_y = nose_bottom + static_cast<int>(0.07 * s);
  const int mouth_dx = static_cast<int>(id.mouth_width * s);
  cv::ellipse(img, cv::Point(center.x, mouth_y), cv::Size(mouth_dx, static_cast<int>(0.02 * s)), 0, 0, 180,
              cv::Scalar(150, 50, 60), thick * 2, cv::LINE_AA);
  // nasolabial folds
  for (int side : {-1, 1}) {
    cv::line(img, cv::Point(center.x + side * static_cast<int>(0.05 * s), nose_bottom - static_cast<int>(0.01 * s)),
             cv::Point(center.x + side * (mouth_dx + static_cast<int>(0.02 * s)), mouth_y + static_cast<int>(0.02 * s)),
             rgb(wrinkle), thick, cv::LINE_AA);
  }

  cv::Mat out;
  cv::resize(img, out, cv::Size(size, size), 0, 0, cv::INTER_AREA);
  if (noise > 0.0) {
    cv::Mat n(out.size(), CV_64FC3);
    std::normal_distribution<double> gauss(0.0, noise);
    for (auto it = n.begin<cv::Vec3d>(); it != n.end<cv::Vec3d>(); ++it) *it = {gauss(rng), gauss(rng), gauss(rng)};
    cv::Mat f;
    out.convertTo(f, CV_64FC3);
    f += n;
    f.convertTo(out, CV_8UC3);
  }
  return out;
}

int make_synthetic(const fs::path& root, const SyntheticOptions& options) {
  if (options.identities < 1 || options.images_per_identity < 1 || options.size < 8 ||
      options.min_age < 0 || options.max_age < options.min_age) {
    throw ConfigError("invalid synthetic dataset options");
  }
  fs::create_directories(root / "images");
  std::ofstream manifest(root / "manifest.csv");
  if (!manifest) throw DataError("cannot write " + (root / "manifest.csv").string());
  manifest << "id,image,age\n";
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> age_dist(options.min_age, options.max_age);
  int written = 0;
  for (int i = 0; i < options.identities; ++i) {
    const auto identity = SyntheticIdentity::random(rng);
    std::ostringstream id;
    id << "p" << std::setw(4) << std::setfill('0') << i;
    for (int k = 0; k < options.images_per_identity; ++k) {
      const int age = age_dist(rng);
      const std::string name = "images/" + id.str() + "_" + std::to_string(k) + ".png";
      cv::Mat face = render_face(identity, age, options.size, rng, options.noise);
      cv::Mat bgr;
      cv::cvtColor(face, bgr, cv::COLOR_RGB2BGR);
      if (!cv::imwrite((root / name).string(), bgr)) throw DataError("cannot write " + (root / name).string());
      manifest << id.str() << "," << name << "," << age << "\n";
      ++written;
    }
  }
  return written;
}

}  // namespace pfa
