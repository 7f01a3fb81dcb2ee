#include "patchdet/imageio.hpp"

#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "patchdet/errors.hpp"

namespace patchdet {

ImageBuffer read_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw DecodeError("cannot decode image: " + path.string());
  if (mat.depth() == CV_16U)
    mat.convertTo(mat, CV_8U, 1.0 / 257.0);
  else if (mat.depth() != CV_8U)
    mat.convertTo(mat, CV_8U);
  ImageBuffer img;
  img.height = mat.rows;
  img.width = mat.cols;
  img.channels = mat.channels() >= 3 ? 3 : 1;
  img.values.resize(static_cast<size_t>(mat.rows) * mat.cols * img.channels);
  for (int r = 0; r < mat.rows; ++r) {
    const std::uint8_t* row = mat.ptr<std::uint8_t>(r);
    for (int c = 0; c < mat.cols; ++c) {
      if (img.channels == 1) {
        img.at(r, c, 0) = row[c * mat.channels()] / 255.0f;
      } else {
        // OpenCV stores BGR(A); emit RGB.
        img.at(r, c, 0) = row[c * mat.channels() + 2] / 255.0f;
        img.at(r, c, 1) = row[c * mat.channels() + 1] / 255.0f;
        img.at(r, c, 2) = row[c * mat.channels() + 0] / 255.0f;
      }
    }
  }
  return img;
}

void write_image(const std::filesystem::path& path, const ImageBuffer& img) {
  cv::Mat mat(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int r = 0; r < img.height; ++r) {
    std::uint8_t* row = mat.ptr<std::uint8_t>(r);
    for (int c = 0; c < img.width; ++c) {
      if (img.channels == 1) {
        row[c] = static_cast<std::uint8_t>(std::lround(clamp01(img.at(r, c, 0)) * 255.0f));
      } else {
        row[c * 3 + 0] = static_cast<std::uint8_t>(std::lround(clamp01(img.at(r, c, 2)) * 255.0f));
        row[c * 3 + 1] = static_cast<std::uint8_t>(std::lround(clamp01(img.at(r, c, 1)) * 255.0f));
        row[c * 3 + 2] = static_cast<std::uint8_t>(std::lround(clamp01(img.at(r, c, 0)) * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path.string(), mat))
    throw DecodeError("cannot write image: " + path.string());
}

PixelMask read_mask(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (mat.empty()) throw DecodeError("cannot decode mask: " + path.string());
  PixelMask mask(mat.rows, mat.cols);
  for (int r = 0; r < mat.rows; ++r) {
    const std::uint8_t* row = mat.ptr<std::uint8_t>(r);
    for (int c = 0; c < mat.cols; ++c) mask.at(r, c) = row[c] ? 1 : 0;
  }
  return mask;
}

void write_mask(const std::filesystem::path& path, const PixelMask& mask) {
  cv::Mat mat(mask.height, mask.width, CV_8UC1);
  for (int r = 0; r < mask.height; ++r) {
    std::uint8_t* row = mat.ptr<std::uint8_t>(r);
    for (int c = 0; c < mask.width; ++c) row[c] = mask.at(r, c) ? 255 : 0;
  }
  if (!cv::imwrite(path.string(), mat))
    throw DecodeError("cannot write mask: " + path.string());
}

} // namespace patchdet
