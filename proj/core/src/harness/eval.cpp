/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/harness/eval.cpp
 *
 * Copyright 2026 The facekit authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "facekit/harness/eval.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"
#include "facekit/common/random.hpp"
#include "facekit/registration/kdtree.hpp"
#include "facekit/registration/rigid.hpp"
#include "facekit/render/rasterizer.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <limits>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace facekit::harness {

namespace {

constexpr int kOracleRounds = 6;
constexpr int kOracleScanPoints = 20000;
constexpr int kIrlsRounds = 30;
constexpr double kIrlsFloor = 1e-4; ///< mm
constexpr std::uint64_t kRenderStream = 0x7e57;

void append_bytes(std::string& out, const Eigen::VectorXd& v)
{
    out.append(reinterpret_cast<const char*>(v.data()), static_cast<std::size_t>(v.size()) * sizeof(double));
}

void append_bytes(std::string& out, const Eigen::MatrixXd& m)
{
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
}

std::string content_of(const morphable::BaseModel& model, const fitpipe::Generators* generators, std::span<const TestSample> testSet,
                       const std::string& config)
{
    std::string c;
    for (const auto* pca : {&model.shape, &model.texture, &model.expression}) {
        append_bytes(c, pca->mean);
        append_bytes(c, pca->components);
        append_bytes(c, pca->singularValues);
    }
    for (const auto& s : testSet) {
        c.append(reinterpret_cast<const char*>(&s.identity), sizeof(s.identity));
        c.append(reinterpret_cast<const char*>(&s.expression), sizeof(s.expression));
        append_bytes(c, geometry::flatten(s.groundTruth.vertices));
    }
    if (generators) {
        for (const auto* ckpt : {generators->detail, generators->expression}) {
            if (!ckpt) continue;
            const auto id = fitpipe::generator_id(ckpt->generator);
            c.append(reinterpret_cast<const char*>(&id.specHash), sizeof(id.specHash));
            c.append(reinterpret_cast<const char*>(&id.parameterHash), sizeof(id.parameterHash));
        }
    }
    c += config;
    return c;
}

TriMesh fit_sample(const morphable::BaseModel& model, const fitpipe::Generators* generators, const TestSample& sample,
                   std::size_t index, const EvalConfig& config)
{
    if (config.protocol == Protocol::ScanFit) {
        const auto scan = synth_scan(sample.groundTruth, model.templ.landmarks(), config.scan, index);
        const auto fit = registration::fit_base_to_scan(model, scan, config.scanFit);
        if (fit.aborted) {
            throw NumericError("scan fit aborted: " + fit.diagnostic);
        }
        return registration::fitted_mesh(model, fit);
    }
    const auto view = render_sample(sample, model.templ.landmarks(), index, config.scan.seed, config.imageFit.camera());
    if (generators != nullptr) {
        return fitpipe::fit_image(view.image, view.landmarks, model, *generators, config.imageFit).meshes.refined;
    }
    const auto base = fitpipe::fit_base(view.image, view.landmarks, model, config.imageFit);
    return morphable::eval_base(model, base.params);
}

} // namespace

const char* to_string(Protocol protocol)
{
    return protocol == Protocol::ScanFit ? "scan" : "image";
}

Protocol protocol_from_string(const std::string& name)
{
    if (name == "scan" || name == "scanFit") {
        return Protocol::ScanFit;
    }
    if (name == "image" || name == "imageFit") {
        return Protocol::ImageFit;
    }
    throw Error("unknown protocol '" + name + "' (expected scan or image)");
}

std::string EvalConfig::to_json() const
{
    nlohmann::json j;
    j["method"] = method;
    j["protocol"] = to_string(protocol);
    j["scan"] = nlohmann::json::parse(scan.to_json());
    j["scanFit"] = {{"iterations", scanFit.iterations},
                    {"correspondenceRefresh", scanFit.correspondenceRefresh},
                    {"wLandmark", scanFit.wLandmark},
                    {"wPrior", scanFit.wPrior},
                    {"wPointToPoint", scanFit.wPointToPoint},
                    {"maxDistance", scanFit.maxDistance},
                    {"maxNormalAngleDeg", scanFit.maxNormalAngleDeg},
                    {"fitExpression", scanFit.fitExpression}};
    j["imageFit"] = nlohmann::json::parse(imageFit.to_json());
    j["mae"] = {{"normalizedLength", mae.normalizedLength}, {"icpIterations", mae.icpIterations}, {"tolerance", mae.tolerance}};
    j["oracle"] = oracle;
    return j.dump();
}

EvalConfig EvalConfig::from_json(const std::string& text)
{
    EvalConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.method = j.value("method", c.method);
        if (j.contains("protocol")) {
            c.protocol = protocol_from_string(j.at("protocol").get<std::string>());
        }
        if (j.contains("scan")) {
            c.scan = SynthSpec::from_json(j.at("scan").dump());
        }
        if (j.contains("scanFit")) {
            const auto& f = j.at("scanFit");
            auto& s = c.scanFit;
            s.iterations = f.value("iterations", s.iterations);
            s.correspondenceRefresh = f.value("correspondenceRefresh", s.correspondenceRefresh);
            s.wLandmark = f.value("wLandmark", s.wLandmark);
            s.wPrior = f.value("wPrior", s.wPrior);
            s.wPointToPoint = f.value("wPointToPoint", s.wPointToPoint);
            s.maxDistance = f.value("maxDistance", s.maxDistance);
            s.maxNormalAngleDeg = f.value("maxNormalAngleDeg", s.maxNormalAngleDeg);
            s.fitExpression = f.value("fitExpression", s.fitExpression);
        }
        if (j.contains("imageFit")) {
            c.imageFit = fitpipe::FitConfig::from_json(j.at("imageFit").dump());
        }
        if (j.contains("mae")) {
            const auto& m = j.at("mae");
            c.mae.normalizedLength = m.value("normalizedLength", c.mae.normalizedLength);
            c.mae.icpIterations = m.value("icpIterations", c.mae.icpIterations);
            c.mae.tolerance = m.value("tolerance", c.mae.tolerance);
        }
        c.oracle = j.value("oracle", c.oracle);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("eval config: ") + e.what());
    }
    return c;
}

std::string EvalReport::to_json() const
{
    nlohmann::json j;
    j["method"] = method;
    j["protocol"] = to_string(protocol);
    j["aggregate"] = {{"mae", mae}, {"var", var}, {"oracleMae", oracleMae}, {"samples", samples.size()}, {"failures", failures},
                      {"oracleFloorHolds", oracleFloorHolds}};
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json r{{"identity", s.identity}, {"expression", s.expression}, {"failed", s.failed}};
        if (s.failed) {
            r["error"] = s.error;
        } else {
            r["mae"] = s.mae;
            r["var"] = s.var;
            r["oracleMae"] = s.oracleMae;
            r["oracleVar"] = s.oracleVar;
        }
        rows.push_back(r);
    }
    j["samples"] = rows;
    j["config"] = nlohmann::json::parse(config);
    j["contentHash"] = contentHash;
    return j.dump(2);
}

namespace {

/// Model coefficients [shape, expression] placed by a rigid transform.
struct OracleState
{
    Eigen::VectorXd coeffs;
    registration::RigidTransform placement;
};

struct OracleBasis
{
    Eigen::MatrixXd basis;
    Eigen::VectorXd mean;

    explicit OracleBasis(const morphable::BaseModel& model) : mean(model.shape.mean)
    {
        const Eigen::MatrixXd bs = model.shape.scaled_basis();
        const Eigen::MatrixXd be = model.expression.scaled_basis();
        basis.resize(bs.rows(), bs.cols() + be.cols());
        basis << bs, be;
    }

    std::vector<Vec3> vertices(const OracleState& s) const
    {
        return s.placement.apply(geometry::unflatten(mean + basis * s.coeffs));
    }
};

OracleState project_known_correspondence(const OracleBasis& b, const TriMesh& groundTruth)
{
    const auto k = b.basis.cols();
    const Eigen::MatrixXd normal = b.basis.transpose() * b.basis + 1e-9 * Eigen::MatrixXd::Identity(k, k);
    const Eigen::LDLT<Eigen::MatrixXd> solver(normal);
    OracleState s{Eigen::VectorXd::Zero(k), {}};
    for (int round = 0; round < kOracleRounds; ++round) {
        const auto inModel = s.placement.inverse().apply(groundTruth.vertices);
        s.coeffs = solver.solve(b.basis.transpose() * (geometry::flatten(inModel) - b.mean));
        s.placement = registration::umeyama_align(geometry::unflatten(b.mean + b.basis * s.coeffs), groundTruth.vertices, false);
    }
    return s;
}

/// Mean point-to-plane distance to the nearest ground-truth vertex, the
/// quantity eval_mae reports before normalisation.
double l1_cost(const registration::KdTree& tree, const registration::ScanTarget& truth, std::span<const Vec3> x)
{
    double sum = 0.0;
    for (const auto& p : x) {
        const auto q = static_cast<std::size_t>(tree.nearest(p).index);
        sum += std::abs(truth.normals[q].dot(p - truth.points[q]));
    }
    return sum / static_cast<double>(x.size());
}

/// Iteratively reweighted least squares on the absolute point-to-plane
/// residuals over coefficients and a rigid increment. Only improving steps
/// are taken.
OracleState refine_l1(const OracleBasis& b, const registration::ScanTarget& truth, OracleState s)
{
    const registration::KdTree tree(truth.points);
    const auto k = b.basis.cols();
    auto x = b.vertices(s);
    double cost = l1_cost(tree, truth, x);
    for (int round = 0; round < kIrlsRounds; ++round) {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k + 6, k + 6);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(k + 6);
        Eigen::VectorXd j(k + 6);
        for (std::size_t v = 0; v < x.size(); ++v) {
            const auto q = static_cast<std::size_t>(tree.nearest(x[v]).index);
            const Vec3& n = truth.normals[q];
            const double r = n.dot(x[v] - truth.points[q]);
            const double w = 1.0 / std::max(std::abs(r), kIrlsFloor);
            const Vec3 rn = s.placement.rotation.transpose() * n;
            j.head(k) = b.basis.middleRows(static_cast<Eigen::Index>(3 * v), 3).transpose() * rn;
            j.segment<3>(k) = x[v].cross(n);
            j.tail<3>() = n;
            h.selfadjointView<Eigen::Lower>().rankUpdate(j, w);
            g += w * r * j;
        }
        h = h.selfadjointView<Eigen::Lower>();
        h.diagonal().array() += 1e-9 * h.trace() + 1e-12;
        const Eigen::VectorXd d = -h.ldlt().solve(g);

        OracleState trial = s;
        trial.coeffs += d.head(k);
        registration::RigidTransform step;
        const Vec3 omega = d.segment<3>(k);
        if (omega.norm() > 0.0) {
            step.rotation = Eigen::AngleAxisd(omega.norm(), omega.normalized()).toRotationMatrix();
        }
        step.translation = d.tail<3>();
        trial.placement = step.compose(s.placement);
        auto tx = b.vertices(trial);
        const double tc = l1_cost(tree, truth, tx);
        if (!(tc < cost)) {
            break;
        }
        s = std::move(trial);
        x = std::move(tx);
        cost = tc;
    }
    return s;
}

TriMesh state_mesh(const morphable::BaseModel& model, const OracleBasis& b, const OracleState& s)
{
    TriMesh mesh;
    mesh.triangles = model.templ.mesh().triangles;
    mesh.uvs = model.templ.mesh().uvs;
    mesh.vertices = b.vertices(s);
    return mesh;
}

void check_topology(const morphable::BaseModel& model, const TriMesh& groundTruth)
{
    if (groundTruth.vertices.size() != model.vertex_count()) {
        throw Error("oracle fit needs the ground truth in template topology");
    }
}

} // namespace

SampleView render_sample(const TestSample& sample, const geometry::LandmarkSet& templateLandmarks, std::size_t index,
                         std::uint64_t seed, const render::Camera& camera)
{
    SampleView v;
    Rng rng(seed, kRenderStream + index);
    v.pose.eulerAngles = Vec3(rng.uniform(-0.12, 0.12), rng.uniform(-0.2, 0.2), rng.uniform(-0.05, 0.05));
    v.pose.translation = Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), -rng.uniform(560, 640));
    v.lighting = render::SHLighting::ambient(0.9);
    for (int c = 0; c < 3; ++c) {
        for (int k = 1; k < 4; ++k) {
            v.lighting.at(c, k) = 0.12 * rng.normal();
        }
    }
    render::RenderOptions options;
    options.recordGradients = false;
    const auto out = render::render(sample.groundTruth, v.pose, v.lighting, camera, options);
    v.image = render::Image{out.width, out.height, out.image};
    v.landmarks.vertexIndices = templateLandmarks.vertexIndices;
    std::vector<Vec3> pts;
    for (int idx : templateLandmarks.vertexIndices) {
        pts.push_back(sample.groundTruth.vertices.at(static_cast<std::size_t>(idx)));
    }
    v.landmarks.points2d = render::project(pts, v.pose, camera).points;
    return v;
}

TriMesh oracle_fit(const morphable::BaseModel& model, const TriMesh& groundTruth)
{
    check_topology(model, groundTruth);
    const OracleBasis b(model);
    return state_mesh(model, b, project_known_correspondence(b, groundTruth));
}

registration::MaeResult oracle_mae(const morphable::BaseModel& model, const TriMesh& groundTruth,
                                   const registration::ScanFitConfig& scanFit, const registration::MaeConfig& mae)
{
    check_topology(model, groundTruth);
    const OracleBasis b(model);
    const auto truth = mesh_target(groundTruth, model.templ.landmarks());

    std::vector<OracleState> candidates{project_known_correspondence(b, groundTruth)};
    registration::ScanFitConfig clean = scanFit;
    clean.iterations = 2 * scanFit.iterations;
    SynthSpec dense;
    dense.scanPoints = std::max<int>(kOracleScanPoints, static_cast<int>(4 * groundTruth.vertices.size()));
    const registration::ScanTarget targets[] = {truth, synth_scan(groundTruth, model.templ.landmarks(), dense, 0)};
    for (const auto& target : targets) {
        const auto fit = registration::fit_base_to_scan(model, target, clean);
        if (fit.aborted) {
            continue;
        }
        Eigen::VectorXd c = Eigen::VectorXd::Zero(b.basis.cols());
        c.head(fit.params.shape.size()) = fit.params.shape;
        if (fit.params.expression.size() == model.expression.components.cols()) {
            c.tail(fit.params.expression.size()) = fit.params.expression;
        }
        candidates.push_back({std::move(c), fit.alignment});
    }

    const registration::KdTree tree(truth.points);
    std::size_t start = 0;
    double startCost = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double c = l1_cost(tree, truth, b.vertices(candidates[i]));
        if (c < startCost) {
            startCost = c;
            start = i;
        }
    }
    auto best = registration::eval_mae(state_mesh(model, b, candidates[start]), truth, mae);
    const auto refined = registration::eval_mae(state_mesh(model, b, refine_l1(b, truth, candidates[start])), truth, mae);
    return refined.mae < best.mae ? refined : best;
}

EvalReport run_eval(const morphable::BaseModel& model, const fitpipe::Generators* generators, std::span<const TestSample> testSet,
                    const EvalConfig& config)
{
    config.scan.validate();
    config.imageFit.validate();
    if (testSet.empty()) {
        throw Error("run_eval needs at least one test sample");
    }
    EvalReport report;
    report.method = config.method;
    report.protocol = config.protocol;
    report.config = config.to_json();
    report.contentHash = git_blob_hash(content_of(model, generators, testSet, report.config));
    report.samples.resize(testSet.size());

    parallel_for(0, testSet.size(), [&](std::size_t i) {
        const TestSample& sample = testSet[i];
        SampleReport& r = report.samples[i];
        r.identity = sample.identity;
        r.expression = sample.expression;
        try {
            const auto truth = mesh_target(sample.groundTruth, model.templ.landmarks());
            const TriMesh fitted = fit_sample(model, generators, sample, i, config);
            const auto m = registration::eval_mae(fitted, truth, config.mae);
            r.mae = m.mae;
            r.var = m.var;
            if (config.oracle) {
                const auto o = oracle_mae(model, sample.groundTruth, config.scanFit, config.mae);
                r.oracleMae = o.mae;
                r.oracleVar = o.var;
            }
        } catch (const std::exception& e) {
            r.failed = true;
            r.error = e.what();
        }
    });

    int ok = 0;
    for (const auto& s : report.samples) {
        if (s.failed) {
            ++report.failures;
            continue;
        }
        ++ok;
        report.mae += s.mae;
        report.var += s.var;
        report.oracleMae += s.oracleMae;
        if (config.oracle && s.oracleMae > s.mae) {
            report.oracleFloorHolds = false;
        }
    }
    if (ok > 0) {
        report.mae /= ok;
        report.var /= ok;
        report.oracleMae /= ok;
    }
    return report;
}

std::string report_table_csv(std::span<const EvalReport> reports)
{
    std::ostringstream out;
    out << "method,protocol,samples,failures,MAE,Var,oracleMAE\n";
    out << std::setprecision(6) << std::fixed;
    for (const auto& r : reports) {
        out << r.method << ',' << to_string(r.protocol) << ',' << r.samples.size() << ',' << r.failures << ',' << r.mae << ',' << r.var
            << ',' << r.oracleMae << '\n';
    }
    return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& jsonPath, const std::filesystem::path& csvPath)
{
    std::ofstream j(jsonPath);
    if (!j) {
        throw Error("cannot write " + jsonPath.string());
    }
    j << report.to_json() << '\n';
    if (!csvPath.empty()) {
        std::ofstream c(csvPath);
        if (!c) {
            throw Error("cannot write " + csvPath.string());
        }
        c << report_table_csv(std::span<const EvalReport>(&report, 1));
    }
}

std::string git_blob_hash(std::string_view content)
{
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 || EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &length) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("SHA-1 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < length; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

} // namespace facekit::harness
