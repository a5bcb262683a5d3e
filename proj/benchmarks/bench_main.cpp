/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: benchmarks/bench_main.cpp
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
#include "facekit/common/random.hpp"
#include "facekit/geometry/face_template.hpp"
#include "facekit/morphable/pca.hpp"
#include "facekit/neuralgen/layers.hpp"
#include "facekit/render/rasterizer.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace facekit;

namespace {

geometry::TriMesh coloured_face(int grid)
{
    auto mesh = geometry::make_face_template(grid).mesh();
    mesh.colors.assign(mesh.vertices.size(), geometry::Vec3(0.7, 0.55, 0.45));
    return mesh;
}

void BM_RenderForward(benchmark::State& state)
{
    const auto mesh = coloured_face(57);
    const int size = static_cast<int>(state.range(0));
    const auto camera = render::Camera::centred(size, size, 800.0 * size / 256.0);
    render::Pose pose;
    pose.translation = geometry::Vec3(0, 0, -600);
    const auto light = render::SHLighting::ambient(0.9);
    render::RenderOptions options;
    options.recordGradients = false;
    for (auto _ : state) {
        benchmark::DoNotOptimize(render::render(mesh, pose, light, camera, options));
    }
}
BENCHMARK(BM_RenderForward)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_RenderBackward(benchmark::State& state)
{
    const auto mesh = coloured_face(57);
    const auto camera = render::Camera::centred(256, 256, 800.0);
    render::Pose pose;
    pose.translation = geometry::Vec3(0, 0, -600);
    const auto out = render::render(mesh, pose, render::SHLighting::ambient(0.9), camera);
    const std::vector<double> grad(out.image.size(), 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(render::render_backward(out, grad));
    }
}
BENCHMARK(BM_RenderBackward)->Unit(benchmark::kMillisecond);

void BM_Conv3x3(benchmark::State& state)
{
    const int channels = static_cast<int>(state.range(0));
    const int size = static_cast<int>(state.range(1));
    neuralgen::ParameterSet params;
    const auto conv = neuralgen::Conv2d::declare(params, "conv", channels, channels, 3, 1);
    Rng rng(1);
    conv.init(params, rng);
    auto x = neuralgen::Tensor::zeros(channels, size, size);
    for (auto& v : x.data) {
        v = rng.normal();
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.forward(params, x));
    }
    state.SetItemsProcessed(state.iterations() * 9LL * channels * channels * size * size);
}
BENCHMARK(BM_Conv3x3)->Args({16, 64})->Args({32, 32})->Args({64, 16})->Unit(benchmark::kMillisecond);

void BM_BuildPca(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto dim = state.range(1);
    Rng rng(2);
    std::vector<Eigen::VectorXd> samples(n, Eigen::VectorXd(dim));
    for (auto& s : samples) {
        for (Eigen::Index i = 0; i < dim; ++i) {
            s[i] = rng.normal();
        }
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(morphable::build_pca(samples, 10, morphable::PcaChannel::Shape));
    }
}
BENCHMARK(BM_BuildPca)->Args({50, 500})->Args({60, 7500})->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
