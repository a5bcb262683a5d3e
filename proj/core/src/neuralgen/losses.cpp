/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/neuralgen/losses.cpp
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
#include "facekit/neuralgen/losses.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"

#include <cmath>

namespace facekit::neuralgen {

namespace {

double softplus(double x)
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x)
{
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Discriminator step size for the finite-difference Hessian-vector products.
constexpr double kHvpStep = 1e-3;

void mask_tensor_inplace(Tensor& t, const std::vector<std::uint8_t>& mask)
{
    const std::size_t p = t.plane();
    for (int c = 0; c < t.channels; ++c) {
        double* row = t.data.data() + static_cast<std::size_t>(c) * p;
        for (std::size_t i = 0; i < p; ++i) {
            if (!mask[i]) {
                row[i] = 0.0;
            }
        }
    }
}

DiscriminatorKind main_kind(GeneratorKind k)
{
    return k == GeneratorKind::Detail ? DiscriminatorKind::Detail : DiscriminatorKind::Expression;
}

DiscriminatorKind normal_kind(GeneratorKind k)
{
    return k == GeneratorKind::Detail ? DiscriminatorKind::NormalDetail : DiscriminatorKind::NormalExpression;
}

void check_discriminators(const GeneratorSpec& spec, const Discriminator& main, const Discriminator& normal)
{
    if (main.kind() != main_kind(spec.kind) || normal.kind() != normal_kind(spec.kind)) {
        throw Error(std::string("discriminators do not match a ") + to_string(spec.kind) + " generator");
    }
    if (main.resolution() != spec.outputResolution || normal.resolution() != spec.outputResolution) {
        throw Error("discriminator resolution differs from the generator");
    }
}

void check_batch(const GeneratorSpec& spec, std::span<const TrainingSample> batch, std::span<const DetailLatent> latents)
{
    if (batch.empty()) {
        throw Error("empty batch");
    }
    if (batch.size() != latents.size()) {
        throw Error("batch has " + std::to_string(batch.size()) + " samples but " + std::to_string(latents.size()) + " latents");
    }
    for (const auto& s : batch) {
        if (s.target && (s.target->channels != spec.outChannels || s.target->width != s.cond.width ||
                         s.target->height != s.cond.height)) {
            throw Error("ground-truth map layout does not match the generator output");
        }
    }
}

geometry::UVMap zero_like(const geometry::UVMap& m)
{
    return geometry::UVMap::zeros(m.width, m.height, m.channels, m.mask);
}

// Adds the output-channel part of a main-discriminator input gradient.
void main_input_to_output(const GeneratorSpec& spec, const Tensor& dInput, geometry::UVMap& gradOut)
{
    const auto oc = static_cast<std::size_t>(spec.outChannels);
    const std::size_t p = dInput.plane();
    for (std::size_t i = 0; i < p; ++i) {
        if (!gradOut.mask[i]) {
            continue;
        }
        for (std::size_t c = 0; c < oc; ++c) {
            gradOut.data[i * oc + c] += dInput.data[(static_cast<std::size_t>(spec.inChannels) + c) * p + i] * spec.inputScale[c];
        }
    }
}

Tensor output_geometry(const geometry::UVMap& output)
{
    return tensor_from_uv(output, 0, 3);
}

void normal_input_to_output(const GeneratorSpec& spec, const geometry::UVMap& output, const NormalMapLayer::Cache& cache,
                            const Tensor& dInput, geometry::UVMap& gradOut)
{
    Tensor dn = Tensor::zeros(3, dInput.height, dInput.width);
    std::copy(dInput.data.begin(), dInput.data.begin() + static_cast<std::ptrdiff_t>(3 * dn.plane()), dn.data.begin());
    const Tensor dg = NormalMapLayer::backward(output_geometry(output), output.mask, cache, dn);
    const auto oc = static_cast<std::size_t>(spec.outChannels);
    for (std::size_t i = 0; i < dg.plane(); ++i) {
        if (!gradOut.mask[i]) {
            continue;
        }
        for (std::size_t c = 0; c < 3; ++c) {
            gradOut.data[i * oc + c] += dg.data[c * dg.plane() + i];
        }
    }
}


GeneratorLoss generator_objective(const Generator& generator, const Discriminator& main, const Discriminator& normal,
                                  std::span<const TrainingSample> batch, std::span<const DetailLatent> latents,
                                  const TrainConfig& config, const LossContext& context)
{
    const auto& spec = generator.spec();
    check_discriminators(spec, main, normal);
    check_batch(spec, batch, latents);
    config.validate();
    std::vector<GeneratorLoss> per(batch.size());

    parallel_for(0, batch.size(), [&](std::size_t i) {
        const auto& sample = batch[i];
        GeneratorLoss& out = per[i];
        Generator::Trace trace;
        const auto result = generator.forward(sample.cond, latents[i], &trace);
        geometry::UVMap grad = zero_like(result);
        const geometry::UVMap target = sample.target ? *sample.target : sample.cond.slice(0, spec.outChannels);
        out.reconstruction = reconstruction_loss(spec, config, result, target, &grad);

        if (config.adversarialWeight > 0.0) {
            Discriminator::Trace dt;
            const double logit = main.forward(main_discriminator_input(spec, sample.cond, result), &dt);
            out.adversarial += config.adversarialWeight * softplus(-logit);
            const Tensor dIn = main.backward(dt, -config.adversarialWeight * sigmoid(-logit), {});
            main_input_to_output(spec, dIn, grad);
            if (config.normalDiscriminatorEnabled) {
                NormalMapLayer::Cache cache;
                Discriminator::Trace nt;
                const double nl = normal.forward(normal_discriminator_input(spec, sample.cond, result, &cache), &nt);
                out.adversarial += config.adversarialWeight * softplus(-nl);
                const Tensor dn = normal.backward(nt, -config.adversarialWeight * sigmoid(-nl), {});
                normal_input_to_output(spec, result, cache, dn, grad);
            }
        }

        auto grads = generator.make_gradients(true);
        generator.backward(trace, grad, grads);

        if (config.pathLengthWeight > 0.0) {
            // Path length |J_w^T y| for a random image-space direction y.
            Rng rng(config.seed ^ 0x9a7e1e57ull, context.step * batch.size() + i);
            geometry::UVMap y = zero_like(result);
            const double norm = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, result.masked_count())));
            for (std::size_t p = 0; p < y.texel_count(); ++p) {
                for (int c = 0; c < y.channels; ++c) {
                    const double r = rng.normal();
                    if (y.mask[p]) {
                        y.data[p * static_cast<std::size_t>(y.channels) + static_cast<std::size_t>(c)] = r * norm / spec.outputScale[static_cast<std::size_t>(c)];
                    }
                }
            }
            auto gw = generator.make_gradients(false);
            generator.backward(trace, y, gw);
            double len = 0.0;
            for (double v : gw.w) {
                len += v * v;
            }
            len = std::sqrt(len);
            const double a = context.pathLengthMean;
            out.pathLengthMeasured = len;
            out.pathLength = config.pathLengthWeight * (len - a) * (len - a);
            if (len > 1e-12) {
                // d/dtheta of the penalty is a directional derivative of grad_theta <out, y>
                // along w; central differences over two extra passes.
                const double eps = kHvpStep / len;
                std::vector<double> wp(trace.w), wm(trace.w);
                for (std::size_t k = 0; k < wp.size(); ++k) {
                    wp[k] += eps * gw.w[k];
                    wm[k] -= eps * gw.w[k];
                }
                auto plus = generator.make_gradients(true);
                auto minus = generator.make_gradients(true);
                Generator::Trace tp, tm;
                generator.forward_w(sample.cond, wp, latents[i].noise, &tp);
                generator.forward_w(sample.cond, wm, latents[i].noise, &tm);
                generator.backward(tp, y, plus);
                generator.backward(tm, y, minus);
                const double coef = config.pathLengthWeight * 2.0 * (len - a) / len / (2.0 * eps);
                for (std::size_t k = 0; k < grads.params.size(); ++k) {
                    grads.params[k] += coef * (plus.params[k] - minus.params[k]);
                }
            }
        }
        out.total = out.reconstruction + out.adversarial + out.pathLength;
        out.grad = std::move(grads.params);
    });

    GeneratorLoss sum;
    sum.grad.assign(generator.parameters().size(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& p : per) {
        sum.total += inv * p.total;
        sum.reconstruction += inv * p.reconstruction;
        sum.adversarial += inv * p.adversarial;
        sum.pathLength += inv * p.pathLength;
        sum.pathLengthMeasured += inv * p.pathLengthMeasured;
        for (std::size_t k = 0; k < sum.grad.size(); ++k) {
            sum.grad[k] += inv * p.grad[k];
        }
    }
    return sum;
}

// Logistic term of one discriminator on one input plus, for reals, R1.
struct DiscTerm
{
    double logistic = 0.0;
    double r1 = 0.0;
};

DiscTerm discriminator_term(const Discriminator& d, const Tensor& input, bool real, double r1Weight,
                            const std::vector<std::uint8_t>& mask, std::span<double> grads)
{
    DiscTerm t;
    Discriminator::Trace trace;
    const double logit = d.forward(input, &trace);
    if (real) {
        t.logistic = softplus(-logit);
        d.backward(trace, -sigmoid(-logit), grads);
    } else {
        t.logistic = softplus(logit);
        d.backward(trace, sigmoid(logit), grads);
    }
    if (!real || r1Weight <= 0.0) {
        return t;
    }
    Tensor g = d.backward(trace, 1.0, {});
    mask_tensor_inplace(g, mask);
    double sq = 0.0;
    for (double v : g.data) {
        sq += v * v;
    }
    t.r1 = 0.5 * r1Weight * sq;
    const double len = std::sqrt(sq);
    if (len <= 1e-12) {
        return t;
    }
    const double eps = kHvpStep / len;
    Tensor xp = input, xm = input;
    for (std::size_t k = 0; k < input.data.size(); ++k) {
        xp.data[k] += eps * g.data[k];
        xm.data[k] -= eps * g.data[k];
    }
    std::vector<double> gp(grads.size(), 0.0), gm(grads.size(), 0.0);
    Discriminator::Trace tp, tm;
    d.forward(xp, &tp);
    d.forward(xm, &tm);
    d.backward(tp, 1.0, gp);
    d.backward(tm, 1.0, gm);
    const double coef = r1Weight / (2.0 * eps);
    for (std::size_t k = 0; k < grads.size(); ++k) {
        grads[k] += coef * (gp[k] - gm[k]);
    }
    return t;
}

} // namespace

void TrainConfig::validate() const
{
    if (lambdaS < 0 || lambdaT < 0 || lambdaE < 0 || adversarialWeight < 0 || r1Weight < 0 || pathLengthWeight < 0) {
        throw Error("loss weights must be non-negative");
    }
    if (learningRate <= 0 || discriminatorLearningRate <= 0) {
        throw Error("learning rates must be positive");
    }
    if (adamBeta1 < 0 || adamBeta1 >= 1 || adamBeta2 < 0 || adamBeta2 >= 1) {
        throw Error("Adam moment decay rates must lie in [0, 1)");
    }
    if (batchSize < 1 || steps < 0 || checkpointEvery < 0) {
        throw Error("batch size must be positive and step counts non-negative");
    }
}

Tensor main_discriminator_input(const GeneratorSpec& spec, const geometry::UVMap& cond, const geometry::UVMap& output)
{
    const Tensor c = tensor_from_uv(cond, 0, spec.inChannels, spec.inputShift, spec.inputScale);
    const std::span<const double> shift(spec.inputShift.data(), static_cast<std::size_t>(spec.outChannels));
    const std::span<const double> scale(spec.inputScale.data(), static_cast<std::size_t>(spec.outChannels));
    const Tensor o = tensor_from_uv(output, 0, spec.outChannels, shift, scale);
    return concat(c, o);
}

Tensor normal_discriminator_input(const GeneratorSpec& spec, const geometry::UVMap& cond, const geometry::UVMap& output,
                                  NormalMapLayer::Cache* cache)
{
    Tensor n = NormalMapLayer::forward(output_geometry(output), output.mask, cache);
    if (spec.kind == GeneratorKind::Detail) {
        return n;
    }
    const std::span<const double> shift(spec.inputShift.data() + 3, 3);
    const std::span<const double> scale(spec.inputScale.data() + 3, 3);
    return concat(n, tensor_from_uv(cond, 3, 3, shift, scale));
}

double reconstruction_loss(const GeneratorSpec& spec, const TrainConfig& config, const geometry::UVMap& output,
                           const geometry::UVMap& target, geometry::UVMap* grad)
{
    const auto oc = static_cast<std::size_t>(spec.outChannels);
    std::vector<double> weight(oc);
    for (std::size_t c = 0; c < oc; ++c) {
        if (spec.kind == GeneratorKind::Detail) {
            weight[c] = c < 3 ? config.lambdaS : config.lambdaT;
        } else {
            weight[c] = config.lambdaE;
        }
    }
    const double count = static_cast<double>(std::max<std::size_t>(1, output.masked_count()));
    double loss = 0.0;
    for (std::size_t p = 0; p < output.texel_count(); ++p) {
        if (!output.mask[p]) {
            continue;
        }
        for (std::size_t c = 0; c < oc; ++c) {
            const double d = output.data[p * oc + c] - target.data[p * oc + c];
            loss += weight[c] * d * d / count;
            if (grad) {
                grad->data[p * oc + c] += 2.0 * weight[c] * d / count;
            }
        }
    }
    return loss;
}

GeneratorLoss loss_detail(const Generator& generator, const Discriminator& main, const Discriminator& normal,
                          std::span<const TrainingSample> batch, std::span<const DetailLatent> latents,
                          const TrainConfig& config, const LossContext& context)
{
    if (generator.spec().kind != GeneratorKind::Detail) {
        throw Error("loss_detail needs a detail generator");
    }
    return generator_objective(generator, main, normal, batch, latents, config, context);
}

GeneratorLoss loss_exp(const Generator& generator, const Discriminator& main, const Discriminator& normal,
                       std::span<const TrainingSample> batch, std::span<const DetailLatent> latents,
                       const TrainConfig& config, const LossContext& context)
{
    if (generator.spec().kind != GeneratorKind::Expression) {
        throw Error("loss_exp needs an expression generator");
    }
    return generator_objective(generator, main, normal, batch, latents, config, context);
}

DiscriminatorLoss discriminator_loss(const Generator& generator, const Discriminator& main, const Discriminator& normal,
                                     std::span<const TrainingSample> batch, std::span<const DetailLatent> latents,
                                     const TrainConfig& config)
{
    const auto& spec = generator.spec();
    check_discriminators(spec, main, normal);
    check_batch(spec, batch, latents);
    struct Per
    {
        double logistic = 0.0, r1 = 0.0;
        std::vector<double> gm, gn;
    };
    std::vector<Per> per(batch.size());
    parallel_for(0, batch.size(), [&](std::size_t i) {
        const auto& s = batch[i];
        Per& r = per[i];
        r.gm.assign(main.parameters().size(), 0.0);
        if (config.normalDiscriminatorEnabled) {
            r.gn.assign(normal.parameters().size(), 0.0);
        }
        const auto fake = generator.forward(s.cond, latents[i]);
        auto add = [&](const DiscTerm& t) {
            r.logistic += t.logistic;
            r.r1 += t.r1;
        };
        add(discriminator_term(main, main_discriminator_input(spec, s.cond, fake), false, 0.0, s.cond.mask, r.gm));
        if (s.target) {
            add(discriminator_term(main, main_discriminator_input(spec, s.cond, *s.target), true, config.r1Weight, s.cond.mask, r.gm));
        }
        if (config.normalDiscriminatorEnabled) {
            add(discriminator_term(normal, normal_discriminator_input(spec, s.cond, fake), false, 0.0, s.cond.mask, r.gn));
            if (s.target) {
                add(discriminator_term(normal, normal_discriminator_input(spec, s.cond, *s.target), true, config.r1Weight,
                                       s.cond.mask, r.gn));
            }
        }
    });
    DiscriminatorLoss out;
    out.gradMain.assign(main.parameters().size(), 0.0);
    out.gradNormal.assign(normal.parameters().size(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& r : per) {
        out.logistic += inv * r.logistic;
        out.r1 += inv * r.r1;
        for (std::size_t k = 0; k < r.gm.size(); ++k) {
            out.gradMain[k] += inv * r.gm[k];
        }
        for (std::size_t k = 0; k < r.gn.size(); ++k) {
            out.gradNormal[k] += inv * r.gn[k];
        }
    }
    out.total = out.logistic + out.r1;
    return out;
}

} // namespace facekit::neuralgen
