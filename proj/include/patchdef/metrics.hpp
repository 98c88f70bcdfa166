#pragma once

#include <vector>

#include "patchdef/image.hpp"
#include "patchdef/victim.hpp"

namespace patchdef {

/// Fraction of argmax predictions matching the labels. Throws on empty input.
double top1_accuracy(const VictimClassifier& model, const std::vector<Image>& images,
                     const std::vector<int>& labels);

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), stabilizers
/// C1=(0.01L)^2, C2=(0.03L)^2 with L=1, evaluated over fully-covered window
/// positions and averaged across channels. Throws when the image is smaller
/// than the window.
double ssim(const Image& a, const Image& b);

/// 10*log10(1/MSE) with peak 1; identical inputs return the 100.0 cap.
double psnr(const Image& a, const Image& b);

/// Intersection over union of two binary masks; 1.0 when both are empty.
double mask_iou(const Mask& pred, const Mask& truth);

}  // namespace patchdef
