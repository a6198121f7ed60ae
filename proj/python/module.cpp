// Python bindings for the main operations: profiling, model inference,
// the selective-scan kernels and the image metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dvmsr/checkpoint.hpp"
#include "dvmsr/image.hpp"
#include "dvmsr/profiler.hpp"
#include "dvmsr/ssm.hpp"
#include "dvmsr/trainer.hpp"

namespace py = pybind11;
using namespace dvmsr;

namespace {

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_numpy(const NpArray& arr) {
    Shape shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = arr.shape(i);
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array tensor_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
    return out;
}

ModelConfig config_from_dict(const py::dict& d) {
    py::module_ json_mod = py::module_::import("json");
    std::string text = py::cast<std::string>(json_mod.attr("dumps")(d));
    return model_config_from_json(text);
}

Image image_from_numpy(const NpArray& arr) {
    if (arr.ndim() != 3 || (arr.shape(2) != 1 && arr.shape(2) != 3)) {
        throw std::invalid_argument("image arrays must be HxWx1 or HxWx3 float64 in [0,1]");
    }
    Image img = Image::create(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
                              static_cast<int>(arr.shape(2)));
    std::copy(arr.data(), arr.data() + arr.size(), img.values.begin());
    return img;
}

py::array image_to_numpy(const Image& img) {
    py::array_t<double> out({img.height, img.width, img.channels});
    std::copy(img.values.begin(), img.values.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_dvmsr, m) {
    m.doc() = "Mamba-based efficient super-resolution: profiling, inference, kernels, metrics";

    py::class_<DvmsrModel>(m, "Model")
        .def(py::init([](const py::dict& cfg, uint64_t seed) {
                 return DvmsrModel(config_from_dict(cfg), seed);
             }),
             py::arg("config"), py::arg("seed") = 0)
        .def_static("load",
                    [](const std::string& path) {
                        return model_from_checkpoint(load_checkpoint(path));
                    },
                    py::arg("path"))
        .def("parameter_count", &DvmsrModel::parameter_count)
        .def("config_json", [](const DvmsrModel& m_) { return model_config_to_json(m_.config()); })
        .def("forward",
             [](const DvmsrModel& m_, const NpArray& x) {
                 NoGradGuard ng;
                 return tensor_to_numpy(m_.forward(tensor_from_numpy(x)));
             },
             py::arg("x"), "Run [N,3,H,W] float64 input through the network")
        .def("upscale",
             [](const DvmsrModel& m_, const NpArray& img) {
                 NoGradGuard ng;
                 Tensor sr = m_.forward(image_to_tensor(image_from_numpy(img)));
                 return image_to_numpy(quantize8(tensor_to_image(sr)));
             },
             py::arg("image"), "Super-resolve one HxWx3 [0,1] image, 8-bit quantized");

    m.def("count_params",
          [](const py::dict& cfg) { return count_params(config_from_dict(cfg)); });
    m.def(
        "count_flops",
        [](const py::dict& cfg, int h, int w, int mac_flops, bool include_elementwise,
           int scan_macs) {
            FlopsConvention conv;
            conv.mac_flops = mac_flops;
            conv.include_elementwise = include_elementwise;
            conv.scan_macs_per_state = scan_macs;
            return count_flops(config_from_dict(cfg), h, w, conv);
        },
        py::arg("config"), py::arg("h"), py::arg("w"), py::arg("mac_flops") = 1,
        py::arg("include_elementwise") = false, py::arg("scan_macs") = 3);
    m.def("count_activations_m", [](const py::dict& cfg, int h, int w) {
        return count_activations_m(config_from_dict(cfg), h, w);
    });
    m.def("profile_json", [](const py::dict& cfg, int h, int w) {
        return profile_model(config_from_dict(cfg), h, w).to_json();
    });

    m.def("zoh_discretize",
          [](const NpArray& a, const NpArray& b, const NpArray& delta) {
              auto [abar, bbar] = zoh_discretize(tensor_from_numpy(a), tensor_from_numpy(b),
                                                 tensor_from_numpy(delta));
              return py::make_tuple(tensor_to_numpy(abar), tensor_to_numpy(bbar));
          },
          "Exact zero-order-hold discretization of diagonal (A, B) with step delta");
    m.def("selective_scan",
          [](const NpArray& a_bar, const NpArray& b_bar_x, const NpArray& c_seq, const NpArray& x,
             const NpArray& d_skip) {
              SsmDiscrete disc;
              disc.a_bar = tensor_from_numpy(a_bar);
              disc.b_bar_x = tensor_from_numpy(b_bar_x);
              disc.c_seq = tensor_from_numpy(c_seq);
              return tensor_to_numpy(selective_scan(disc, tensor_from_numpy(x),
                                                    tensor_from_numpy(d_skip)));
          },
          "Sequential state-space recurrence over [N,L,D,S] discrete parameters");

    m.def("bicubic_resize", [](const NpArray& img, double scale) {
        return image_to_numpy(bicubic_resize(image_from_numpy(img), scale));
    });
    m.def("rgb_to_y",
          [](const NpArray& img) { return image_to_numpy(rgb_to_y(image_from_numpy(img))); });
    m.def("psnr", [](const NpArray& a, const NpArray& b, int border) {
        return psnr(image_from_numpy(a), image_from_numpy(b), border);
    });
    m.def("ssim", [](const NpArray& a, const NpArray& b, int border) {
        return ssim(image_from_numpy(a), image_from_numpy(b), border);
    });
    m.def("load_png", [](const std::string& path) { return image_to_numpy(load_png(path)); });
    m.def("save_png", [](const NpArray& img, const std::string& path) {
        save_png(image_from_numpy(img), path);
    });

    py::dict presets;
    py::module_ json_mod = py::module_::import("json");
    presets["student"] = json_mod.attr("loads")(model_config_to_json(student_config()));
    presets["teacher-small"] = json_mod.attr("loads")(model_config_to_json(teacher_small_config()));
    presets["teacher-large"] = json_mod.attr("loads")(model_config_to_json(teacher_large_config()));
    m.attr("PRESETS") = presets;
}
