#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace pfa {

// Decodes an image file to RGB uint8 (h, w, 3); throws DataError on failure.
cv::Mat read_rgb(const std::filesystem::path& path);

// Center-crops to a square and resizes to size x size.
cv::Mat square_resize(const cv::Mat& rgb, int size);

// uint8 RGB (h, w, 3) -> uint8 tensor (3, h, w).
torch::Tensor to_chw_u8(const cv::Mat& rgb);

// uint8 (3, h, w) -> float in [-1, 1] via v / 127.5 - 1.
torch::Tensor normalize_u8(const torch::Tensor& chw);

// Float (3, h, w) in [-1, 1] (clipped) -> uint8 RGB cv::Mat.
cv::Mat to_rgb_mat(const torch::Tensor& chw);

void write_png(const std::filesystem::path& path, const torch::Tensor& chw);

// Rows of equally sized (3, h, w) images tiled into one picture, with an
// optional caption strip per column.
void write_montage(const std::filesystem::path& path, const std::vector<std::vector<torch::Tensor>>& rows,
                   const std::vector<std::string>& column_labels = {});

}  // namespace pfa
