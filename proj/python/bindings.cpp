#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstring>
#include <string>

#include "car/checkpoint.hpp"
#include "car/color.hpp"
#include "car/gradcheck.hpp"
#include "car/image.hpp"
#include "car/image_io.hpp"
#include "car/metrics.hpp"
#include "car/net/bicubic.hpp"
#include "car/pipeline.hpp"
#include "car/quantizer.hpp"
#include "car/resampler.hpp"

namespace py = pybind11;
using namespace car;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const Array& a) {
  std::vector<std::size_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
  Tensor t(shape);
  std::memcpy(t.data(), a.data(), sizeof(double) * t.size());
  return t;
}

Array array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::memcpy(a.mutable_data(), t.data(), sizeof(double) * t.size());
  return a;
}

Image image_from_array(const Array& a) {
  if (a.ndim() == 2) {
    Tensor t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)), 1});
    std::memcpy(t.data(), a.data(), sizeof(double) * t.size());
    return Image(std::move(t), ColorSpace::Y);
  }
  if (a.ndim() != 3) throw std::invalid_argument("image array must be (H, W, C) or (H, W)");
  Tensor t = tensor_from_array(a);
  const ColorSpace space = t.extent(2) == 1 ? ColorSpace::Y : ColorSpace::RGB;
  return Image(std::move(t), space);
}

Array array_from_image(const Image& img) { return array_from_tensor(img.tensor()); }

KernelNorm norm_from_string(const std::string& mode) { return kernel_norm_from_string(mode); }

}  // namespace

PYBIND11_MODULE(carcpp, m) {
  m.doc() = "content-adaptive downscaling core: PNG I/O, resampling, quantizer, metrics";

  m.def("load_png", [](const std::string& path, bool strip_alpha) {
          return array_from_image(load_png(path, strip_alpha));
        },
        py::arg("path"), py::arg("strip_alpha") = false,
        "Load an 8-bit PNG as an (H, W, C) float array in [0, 1].");

  m.def("save_png", [](const Array& img, const std::string& path) {
          save_png(image_from_array(img), path);
        },
        py::arg("image"), py::arg("path"),
        "Save an (H, W, 1|3) array in [0, 1] as an 8-bit PNG.");

  m.def("rgb_to_y", [](const Array& img) { return array_from_image(rgb_to_y(image_from_array(img))); },
        py::arg("image"), "BT.601 luma plane of an RGB image, (H, W, 1).");

  m.def("project", [](std::size_t x, std::size_t y, double scale) { return project(x, y, scale); },
        py::arg("x"), py::arg("y"), py::arg("scale"),
        "Continuous HR coordinates (u, v) of LR pixel (x, y).");

  m.def("bilinear_sample", [](const Array& img, double u, double v) {
          const Image im = image_from_array(img);
          const BilinearSample s = bilinear_sample(im, u, v);
          std::vector<double> value, du, dv;
          for (std::size_t c = 0; c < s.channels; ++c) {
            value.push_back(s.value[c]);
            du.push_back(s.du[c]);
            dv.push_back(s.dv[c]);
          }
          return py::make_tuple(value, du, dv);
        },
        py::arg("image"), py::arg("u"), py::arg("v"),
        "Clamped bilinear sample: per-channel (value, d/du, d/dv).");

  m.def("normalize_kernels", [](const Array& raw, const std::string& mode) {
          return array_from_tensor(normalize_kernels(tensor_from_array(raw),
                                                     norm_from_string(mode)).field().k);
        },
        py::arg("raw"), py::arg("mode") = "softmax",
        "Normalize raw (lh, lw, m, n) kernel logits/weights to sum 1 per pixel.");

  m.def("downscale", [](const Array& hr, const Array& kernels, const Array& dx, const Array& dy,
                        std::size_t scale, double offset_unit) {
          KernelField kf{tensor_from_array(kernels)};
          OffsetField of{tensor_from_array(dx), tensor_from_array(dy)};
          ResampleGeometry geom{scale, kf.k.extent(2), kf.k.extent(3),
                                offset_unit > 0 ? offset_unit : static_cast<double>(scale)};
          return array_from_image(
              downscale_forward(image_from_array(hr), kf, of, geom, /*record_tape=*/false).lr);
        },
        py::arg("hr"), py::arg("kernels"), py::arg("dx"), py::arg("dy"), py::arg("scale"),
        py::arg("offset_unit") = 0.0,
        "Resample an HR image with per-LR-pixel kernels (lh, lw, m, n) and tap offsets.");

  m.def("quantize", [](const Array& img, double alpha, bool enabled) {
          QuantizerConfig qc;
          qc.alpha = alpha;
          qc.enabled = enabled;
          return array_from_image(quantize_forward(image_from_array(img), qc));
        },
        py::arg("image"), py::arg("alpha") = 0.5, py::arg("enabled") = true,
        "Clamp to [0, 1] and round to the 8-bit lattice (identity when disabled).");

  m.def("soft_round_factor", &soft_round_factor, py::arg("x"), py::arg("alpha") = 0.5,
        "Derivative surrogate of the byte rounding at pre-round value x.");

  m.def("bicubic_upscale", [](const Array& lr, std::size_t scale) {
          return array_from_image(bicubic_upscale(image_from_array(lr), scale));
        },
        py::arg("lr"), py::arg("scale"));

  m.def("bicubic_downscale", [](const Array& hr, std::size_t scale) {
          return array_from_image(bicubic_downscale(image_from_array(hr), scale));
        },
        py::arg("hr"), py::arg("scale"));

  m.def("psnr", [](const Array& a, const Array& b, std::size_t border) {
          return psnr(image_from_array(a), image_from_array(b), border);
        },
        py::arg("a"), py::arg("b"), py::arg("border") = 0,
        "PSNR in dB over byte-quantized values.");

  m.def("ssim_y", [](const Array& a, const Array& b) {
          return ssim_y(image_from_array(a), image_from_array(b));
        },
        py::arg("a"), py::arg("b"), "Mean SSIM of the byte-quantized luma planes.");

  m.def("run_gradcheck", [](std::size_t instances, std::uint64_t seed, double tol) {
          GradCheckOptions opt;
          opt.instances = instances;
          opt.seed = seed;
          opt.tol = tol;
          return all_passed(run_gradient_checks(opt));
        },
        py::arg("instances") = 5, py::arg("seed") = 7, py::arg("tol") = 1e-5,
        "Compare every analytic gradient against central finite differences.");

  m.def("write_delta_checkpoint", [](const std::string& path) {
          save_checkpoint(delta_checkpoint(), path);
        },
        py::arg("path"), "Write the scale-1 identity checkpoint (debugging fixture).");

  py::class_<Pipeline>(m, "Model", "Inference bundle rebuilt from a checkpoint file.")
      .def(py::init([](const std::string& path, const std::string& upscaler) {
             return new Pipeline(load_checkpoint(path), upscaler);
           }),
           py::arg("path"), py::arg("upscaler") = "")
      .def_property_readonly("scale", &Pipeline::scale)
      .def_property_readonly("upscaler", [](const Pipeline& p) { return p.upscaler(); })
      .def("downscale", [](Pipeline& p, const Array& hr, bool quantize) {
             return array_from_image(p.downscale(image_from_array(hr), quantize));
           },
           py::arg("hr"), py::arg("quantize") = true)
      .def("upscale", [](Pipeline& p, const Array& lr) {
             return array_from_image(p.upscale(image_from_array(lr)));
           },
           py::arg("lr"));
}
