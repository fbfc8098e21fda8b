// Python face of the library: scene synthesis, dataset building, run
// configuration, training, evaluation, the analysis metrics and the
// gradient-check battery. Arrays cross the boundary as flat lists plus
// shapes — at desk scale the copies are cheap and the module stays free of
// any array-library dependency.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "foginv/config.hpp"
#include "foginv/errors.hpp"
#include "foginv/gradbattery.hpp"
#include "foginv/io.hpp"
#include "foginv/metrics.hpp"
#include "foginv/scenegen.hpp"
#include "foginv/segnet.hpp"
#include "foginv/trainer.hpp"

namespace py = pybind11;
using namespace foginv;

namespace {

FactorSet as_set(const std::vector<std::vector<double>>& points) {
  FactorSet s;
  s.points = points;
  return s;
}

SetMetric parse_metric(const std::string& name) {
  if (name == "cosine") return SetMetric::Cosine;
  if (name == "euclidean") return SetMetric::Euclidean;
  throw ConfigError("unknown set metric '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "fog-invariant segmentation workbench core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<TrainAbort>(m, "TrainAbort", PyExc_RuntimeError);
  py::register_exception<VerifyError>(m, "VerifyError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

  // --- scene synthesis -----------------------------------------------------
  py::class_<Scene>(m, "Scene")
      .def_readonly("height", &Scene::height)
      .def_readonly("width", &Scene::width)
      .def_readonly("num_classes", &Scene::num_classes)
      .def_readonly("image", &Scene::image)
      .def_readonly("labels", &Scene::labels)
      .def_readonly("depth", &Scene::depth)
      .def_readonly("seed", &Scene::seed);

  py::class_<FogParams>(m, "FogParams")
      .def(py::init<>())
      .def_readwrite("beta", &FogParams::beta)
      .def_readwrite("airlight", &FogParams::airlight);

  m.def("generate_scene", &generate_scene, py::arg("seed"), py::arg("height"),
        py::arg("width"), py::arg("num_classes"));
  m.def("apply_homogeneous_fog", &apply_homogeneous_fog, py::arg("scene"),
        py::arg("params"));
  m.def(
      "apply_heterogeneous_fog",
      [](const Scene& scene, const FogParams& params, std::uint64_t seed) {
        return apply_heterogeneous_fog(scene, params, seed);
      },
      py::arg("scene"), py::arg("params"), py::arg("seed"));
  m.def("value_noise", &value_noise, py::arg("x"), py::arg("y"),
        py::arg("octaves"), py::arg("seed"));

  // --- dataset -------------------------------------------------------------
  py::class_<DatasetConfig>(m, "DatasetConfig")
      .def(py::init<>())
      .def_readwrite("root", &DatasetConfig::root)
      .def_readwrite("image_size", &DatasetConfig::image_size)
      .def_readwrite("num_classes", &DatasetConfig::num_classes)
      .def_readwrite("train_cw", &DatasetConfig::train_cw)
      .def_readwrite("train_rf", &DatasetConfig::train_rf)
      .def_readwrite("eval_cw", &DatasetConfig::eval_cw)
      .def_readwrite("eval_rf", &DatasetConfig::eval_rf)
      .def_readwrite("fog", &DatasetConfig::fog)
      .def_readwrite("master_seed", &DatasetConfig::master_seed);

  m.def("build_dataset", &build_dataset, py::arg("config"));

  py::class_<ManifestRow>(m, "ManifestRow")
      .def_readonly("path", &ManifestRow::path)
      .def_readonly("domain", &ManifestRow::domain)
      .def_readonly("split", &ManifestRow::split)
      .def_readonly("pair_id", &ManifestRow::pair_id)
      .def_readonly("seed", &ManifestRow::seed)
      .def_readonly("beta", &ManifestRow::beta)
      .def_readonly("airlight", &ManifestRow::airlight);

  py::class_<Sample>(m, "Sample")
      .def_readonly("image", &Sample::image)
      .def_readonly("labels", &Sample::labels)
      .def_readonly("domain", &Sample::domain)
      .def_readonly("pair_id", &Sample::pair_id)
      .def_readonly("height", &Sample::height)
      .def_readonly("width", &Sample::width);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<std::filesystem::path>(), py::arg("root"))
      .def("rows", &Dataset::rows, py::arg("split"), py::arg("domain"),
           py::return_value_policy::copy)
      .def("has", &Dataset::has, py::arg("split"), py::arg("domain"))
      .def("load", &Dataset::load, py::arg("row"), py::arg("with_labels"))
      .def_property_readonly("label_files_read", &Dataset::label_files_read);

  // --- run configuration ---------------------------------------------------
  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("data_root", &RunConfig::data_root)
      .def_readwrite("image_size", &RunConfig::image_size)
      .def_readwrite("num_classes", &RunConfig::num_classes)
      .def_readwrite("train_cw", &RunConfig::train_cw)
      .def_readwrite("train_rf", &RunConfig::train_rf)
      .def_readwrite("eval_cw", &RunConfig::eval_cw)
      .def_readwrite("eval_rf", &RunConfig::eval_rf)
      .def_readwrite("beta", &RunConfig::beta)
      .def_readwrite("width_base", &RunConfig::width_base)
      .def_readwrite("tap_layers", &RunConfig::tap_layers)
      .def_readwrite("factor_dim", &RunConfig::factor_dim)
      .def_readwrite("lambda_fsm", &RunConfig::lambda_fsm)
      .def_readwrite("lambda_con", &RunConfig::lambda_con)
      .def_readwrite("margin", &RunConfig::margin)
      .def_readwrite("batch_per_domain", &RunConfig::batch_per_domain)
      .def_readwrite("pretrain_iters", &RunConfig::pretrain_iters)
      .def_readwrite("warmup_iters", &RunConfig::warmup_iters)
      .def_readwrite("total_iters", &RunConfig::total_iters)
      .def_readwrite("master_seed", &RunConfig::master_seed)
      .def("set", &RunConfig::set, py::arg("key"), py::arg("value"))
      .def("load_file", &RunConfig::load_file, py::arg("path"))
      .def("serialize", &RunConfig::serialize)
      .def("save", &RunConfig::save, py::arg("path"))
      .def("validate", &RunConfig::validate)
      .def("dataset_config", &RunConfig::dataset_config);

  m.def("load_run_config", &load_run_config, py::arg("path"));

  // --- network, training, evaluation ---------------------------------------
  py::class_<SegNetwork>(m, "SegNetwork")
      .def_static("build", &SegNetwork::build, py::arg("seed"),
                  py::arg("num_classes"), py::arg("width_base"))
      .def_static("load", &SegNetwork::load, py::arg("dir"))
      .def("save", &SegNetwork::save, py::arg("dir"))
      .def_property_readonly("num_classes", &SegNetwork::num_classes)
      .def_readwrite("tap_layers", &SegNetwork::tap_layers);

  m.def("predict", &predict, py::arg("net"), py::arg("sample"));

  m.def(
      "train",
      [](const RunConfig& cfg, const std::filesystem::path& out_dir) {
        const Dataset data(cfg.data_root);
        Trainer trainer(cfg, data);
        trainer.train(out_dir);
      },
      py::arg("config"), py::arg("out_dir"),
      "Full three-phase run; writes checkpoints and train_log.csv.");

  py::class_<MiouResult>(m, "MiouResult")
      .def_readonly("per_class", &MiouResult::per_class)
      .def_readonly("present", &MiouResult::present)
      .def_readonly("mean", &MiouResult::mean);

  py::class_<SplitEval>(m, "SplitEval")
      .def_readonly("domain", &SplitEval::domain)
      .def_readonly("images", &SplitEval::images)
      .def_readonly("res", &SplitEval::res);

  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint,
         const std::filesystem::path& data_root, const std::string& split) {
        const SegNetwork net = SegNetwork::load(checkpoint);
        const Dataset data(data_root);
        return evaluate_split(net, data, split);
      },
      py::arg("checkpoint"), py::arg("data_root"), py::arg("split") = "eval");

  m.def(
      "analyze",
      [](const std::filesystem::path& checkpoint,
         const std::filesystem::path& data_root,
         const std::filesystem::path& out_dir,
         const std::optional<std::filesystem::path>& baseline,
         const std::optional<std::filesystem::path>& filter_dir) {
        AnalyzeOptions opts;
        opts.checkpoint = checkpoint;
        opts.baseline = baseline;
        opts.data_root = data_root;
        opts.out_dir = out_dir;
        opts.filter_dir = filter_dir;
        analyze(opts);
        return out_dir / "analysis.csv";
      },
      py::arg("checkpoint"), py::arg("data_root"), py::arg("out_dir"),
      py::arg("baseline") = std::nullopt, py::arg("filters") = std::nullopt);

  // --- metrics -------------------------------------------------------------
  m.def(
      "miou",
      [](const std::vector<std::uint8_t>& truth,
         const std::vector<std::uint8_t>& pred, int num_classes) {
        return miou(truth, pred, num_classes);
      },
      py::arg("truth"), py::arg("pred"), py::arg("num_classes"));

  m.def("kmeans", &kmeans, py::arg("points"), py::arg("k"), py::arg("seed"),
        py::arg("max_iters") = 100);

  py::class_<ClusterIndices>(m, "ClusterIndices")
      .def_readonly("ari", &ClusterIndices::ari)
      .def_readonly("nmi", &ClusterIndices::nmi)
      .def_readonly("ami", &ClusterIndices::ami);

  m.def("clustering_indices", &clustering_indices, py::arg("assignments"),
        py::arg("truth"));

  m.def(
      "cosine_distance",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        return cosine_distance(a, b);
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "avg_hausdorff",
      [](const std::vector<std::vector<double>>& a,
         const std::vector<std::vector<double>>& b,
         const std::string& metric) {
        return avg_hausdorff(as_set(a), as_set(b), parse_metric(metric));
      },
      py::arg("a"), py::arg("b"), py::arg("metric") = "cosine");

  m.def("independence_score", &independence_score, py::arg("fog_factors"),
        py::arg("content_factors"), py::arg("k"));

  // --- tensor container ----------------------------------------------------
  m.def(
      "save_fgten",
      [](const std::filesystem::path& path, const Shape& shape,
         const std::vector<double>& values) {
        save_fgten(path, shape, values);
      },
      py::arg("path"), py::arg("shape"), py::arg("values"));
  m.def(
      "load_fgten",
      [](const std::filesystem::path& path) {
        const HostTensor t = load_fgten(path);
        return py::make_tuple(t.shape, t.values);
      },
      py::arg("path"), "Returns (shape, row-major values).");

  // --- gradient battery ----------------------------------------------------
  py::class_<CheckCase>(m, "CheckCase")
      .def_readonly("name", &CheckCase::name)
      .def_readonly("max_rel_error", &CheckCase::max_rel_error)
      .def_readonly("attempts", &CheckCase::attempts);

  py::class_<CheckReport>(m, "CheckReport")
      .def_readonly("cases", &CheckReport::cases)
      .def_readonly("tolerance", &CheckReport::tolerance)
      .def("all_passed", &CheckReport::all_passed)
      .def("worst", &CheckReport::worst);

  m.def(
      "grad_check",
      [](const std::string& scale, std::uint64_t seed) {
        return run_grad_checks(parse_check_scale(scale), seed);
      },
      py::arg("scale") = "small", py::arg("seed") = 1);
}
