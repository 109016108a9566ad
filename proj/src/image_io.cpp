#include "pfa/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pfa/core.hpp"

namespace pfa {

namespace fs = std::filesystem;

cv::Mat read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

cv::Mat square_resize(const cv::Mat& rgb, int size) {
  const int side = std::min(rgb.cols, rgb.rows);
  cv::Rect roi((rgb.cols - side) / 2, (rgb.rows - side) / 2, side, side);
  cv::Mat cropped = rgb(roi);
  if (side == size) return cropped.clone();
  cv::Mat out;
  cv::resize(cropped, out, cv::Size(size, size), 0, 0, side > size ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

torch::Tensor to_chw_u8(const cv::Mat& rgb) {
  cv::Mat contiguous = rgb.isContinuous() ? rgb : rgb.clone();
  auto hwc = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).clone(at::MemoryFormat::Contiguous);
}

torch::Tensor normalize_u8(const torch::Tensor& chw) { return chw.to(torch::kFloat) / 127.5 - 1.0; }

cv::Mat to_rgb_mat(const torch::Tensor& chw) {
  auto u8 = ((chw.detach().to(torch::kFloat).clamp(-1.0, 1.0) + 1.0) * 127.5).round().to(torch::kUInt8);
  auto hwc = u8.permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3);
  std::memcpy(rgb.data, hwc.data_ptr<std::uint8_t>(), static_cast<std::size_t>(hwc.numel()));
  return rgb;
}

void write_png(const fs::path& path, const torch::Tensor& chw) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(to_rgb_mat(chw), bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write " + path.string());
}

void write_montage(const fs::path& path, const std::vector<std::vector<torch::Tensor>>& rows,
                   const std::vector<std::string>& column_labels) {
  if (rows.empty() || rows.front().empty()) return;
  const int h = static_cast<int>(rows.front().front().size(1));
  const int w = static_cast<int>(rows.front().front().size(2));
  const int caption = column_labels.empty() ? 0 : 16;
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  cv::Mat canvas(caption + h * static_cast<int>(rows.size()), w * static_cast<int>(cols), CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::size_t c = 0; c < column_labels.size() && c < cols; ++c) {
    cv::putText(canvas, column_labels[c], cv::Point(static_cast<int>(c) * w + 2, 12), cv::FONT_HERSHEY_PLAIN, 0.8,
                cv::Scalar(0, 0, 0));
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      cv::Mat tile = to_rgb_mat(rows[r][c]);
      tile.copyTo(canvas(cv::Rect(static_cast<int>(c) * w, caption + static_cast<int>(r) * h, w, h)));
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(canvas, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write " + path.string());
}

}  // namespace pfa
