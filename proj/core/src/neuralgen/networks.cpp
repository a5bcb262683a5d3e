/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/neuralgen/networks.cpp
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
#include "facekit/neuralgen/networks.hpp"

#include "facekit/common/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>

namespace facekit::neuralgen {

namespace {

const double kReluGain = std::sqrt(2.0);
constexpr double kStyleGain = 0.2;

// Removes the masked mean of every tile x tile block and zeroes unmasked
// texels. Symmetric, so it is its own adjoint.
void tile_highpass(std::vector<double>& plane, const std::vector<std::uint8_t>& mask, int res, int tile)
{
    for (int by = 0; by < res; by += tile) {
        for (int bx = 0; bx < res; bx += tile) {
            const int ye = std::min(res, by + tile), xe = std::min(res, bx + tile);
            double sum = 0.0;
            int n = 0;
            for (int y = by; y < ye; ++y) {
                for (int x = bx; x < xe; ++x) {
                    const auto i = static_cast<std::size_t>(y * res + x);
                    if (mask[i]) {
                        sum += plane[i];
                        ++n;
                    }
                }
            }
            const double mean = n ? sum / n : 0.0;
            for (int y = by; y < ye; ++y) {
                for (int x = bx; x < xe; ++x) {
                    const auto i = static_cast<std::size_t>(y * res + x);
                    plane[i] = mask[i] ? plane[i] - mean : 0.0;
                }
            }
        }
    }
}

std::vector<double> lift_noise(std::span<const double> plane, int factor, const std::vector<std::uint8_t>& mask, int res)
{
    const int r = res / factor;
    std::vector<double> out(static_cast<std::size_t>(res * res), 0.0);
    if (factor >= GeneratorSpec::noiseTile) {
        return out;
    }
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            out[static_cast<std::size_t>(y * res + x)] = plane[static_cast<std::size_t>((y / factor) * r + x / factor)];
        }
    }
    tile_highpass(out, mask, res, GeneratorSpec::noiseTile);
    return out;
}

// Adjoint of lift_noise.
std::vector<double> lower_noise(std::vector<double> grad, int factor, const std::vector<std::uint8_t>& mask, int res)
{
    const int r = res / factor;
    std::vector<double> out(static_cast<std::size_t>(r * r), 0.0);
    if (factor >= GeneratorSpec::noiseTile) {
        return out;
    }
    tile_highpass(grad, mask, res, GeneratorSpec::noiseTile);
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            out[static_cast<std::size_t>((y / factor) * r + x / factor)] += grad[static_cast<std::size_t>(y * res + x)];
        }
    }
    return out;
}

bool power_of_two(int v)
{
    return v > 0 && (v & (v - 1)) == 0;
}

} // namespace

const char* to_string(GeneratorKind kind)
{
    return kind == GeneratorKind::Detail ? "detail" : "exp";
}

GeneratorKind generator_kind_from_string(const std::string& name)
{
    if (name == "detail") {
        return GeneratorKind::Detail;
    }
    if (name == "exp" || name == "expression") {
        return GeneratorKind::Expression;
    }
    throw Error("unknown generator kind '" + name + "' (expected detail or exp)");
}

std::vector<int> GeneratorSpec::default_channels(int levels)
{
    std::vector<int> ch;
    for (int l = 0; l < levels; ++l) {
        const int shift = levels - 1 - l;
        ch.push_back(shift >= 4 ? 256 : 16 << shift);
    }
    return ch;
}

GeneratorSpec GeneratorSpec::detail(int resolution)
{
    GeneratorSpec s;
    s.kind = GeneratorKind::Detail;
    s.outputResolution = resolution;
    s.inChannels = 6;
    s.outChannels = 6;
    s.channelsPerLevel = default_channels(s.levels());
    s.inputShift = {0.0, 0.0, 50.0, 0.5, 0.5, 0.5};
    s.inputScale = {1.0 / 60, 1.0 / 60, 1.0 / 60, 2.0, 2.0, 2.0};
    s.outputScale = {1.0, 1.0, 1.0, 0.1, 0.1, 0.1};
    return s;
}

GeneratorSpec GeneratorSpec::expression(int resolution)
{
    GeneratorSpec s;
    s.kind = GeneratorKind::Expression;
    s.outputResolution = resolution;
    s.inChannels = 6;
    s.outChannels = 3;
    s.channelsPerLevel = default_channels(s.levels());
    s.inputShift = {0.0, 0.0, 50.0, 0.0, 0.0, 0.0};
    s.inputScale = {1.0 / 60, 1.0 / 60, 1.0 / 60, 1.0 / 3, 1.0 / 3, 1.0 / 3};
    s.outputScale = {1.0, 1.0, 1.0};
    return s;
}

int GeneratorSpec::levels() const
{
    if (!power_of_two(baseResolution) || !power_of_two(outputResolution) || outputResolution < baseResolution) {
        return 0;
    }
    return std::countr_zero(static_cast<unsigned>(outputResolution / baseResolution)) + 1;
}

void GeneratorSpec::validate() const
{
    if (!power_of_two(outputResolution) || outputResolution < 8 || outputResolution > 1024) {
        throw Error("generator output resolution must be a power of two in [8, 1024], got " + std::to_string(outputResolution));
    }
    if (!power_of_two(baseResolution) || baseResolution < 2 || baseResolution > outputResolution) {
        throw Error("generator base resolution must be a power of two no larger than the output, got " +
                    std::to_string(baseResolution));
    }
    if (static_cast<int>(channelsPerLevel.size()) != levels()) {
        throw Error("channel schedule has " + std::to_string(channelsPerLevel.size()) + " entries but the generator has " +
                    std::to_string(levels()) + " levels");
    }
    for (int c : channelsPerLevel) {
        if (c < 1) {
            throw Error("channel counts must be positive");
        }
    }
    if (latentDim < 1 || mappingDepth < 1 || inChannels < 1 || outChannels < 1 || outChannels > inChannels) {
        throw Error("invalid generator dimensions");
    }
    if (static_cast<int>(inputShift.size()) != inChannels || static_cast<int>(inputScale.size()) != inChannels ||
        static_cast<int>(outputScale.size()) != outChannels) {
        throw Error("input/output normalisation vectors do not match the channel counts");
    }
}

std::string GeneratorSpec::to_json() const
{
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["baseResolution"] = baseResolution;
    j["outputResolution"] = outputResolution;
    j["inChannels"] = inChannels;
    j["outChannels"] = outChannels;
    j["latentDim"] = latentDim;
    j["mappingDepth"] = mappingDepth;
    j["channelsPerLevel"] = channelsPerLevel;
    j["inputShift"] = inputShift;
    j["inputScale"] = inputScale;
    j["outputScale"] = outputScale;
    return j.dump();
}

GeneratorSpec GeneratorSpec::from_json(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        GeneratorSpec s;
        s.kind = generator_kind_from_string(j.at("kind").get<std::string>());
        s.baseResolution = j.at("baseResolution").get<int>();
        s.outputResolution = j.at("outputResolution").get<int>();
        s.inChannels = j.at("inChannels").get<int>();
        s.outChannels = j.at("outChannels").get<int>();
        s.latentDim = j.at("latentDim").get<int>();
        s.mappingDepth = j.at("mappingDepth").get<int>();
        s.channelsPerLevel = j.at("channelsPerLevel").get<std::vector<int>>();
        s.inputShift = j.at("inputShift").get<std::vector<double>>();
        s.inputScale = j.at("inputScale").get<std::vector<double>>();
        s.outputScale = j.at("outputScale").get<std::vector<double>>();
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("generator spec: ") + e.what());
    }
}

std::uint64_t GeneratorSpec::hash() const
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : to_json()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

DetailLatent DetailLatent::sample(const GeneratorSpec& spec, Rng& rng)
{
    DetailLatent l;
    l.z = rng.normal_vector(static_cast<std::size_t>(spec.latentDim));
    for (int level = 0; level < spec.levels(); ++level) {
        const auto r = static_cast<std::size_t>(spec.level_resolution(level));
        l.noise.push_back(rng.normal_vector(r * r));
    }
    return l;
}

DetailLatent DetailLatent::zeros(const GeneratorSpec& spec)
{
    DetailLatent l;
    l.z.assign(static_cast<std::size_t>(spec.latentDim), 0.0);
    for (int level = 0; level < spec.levels(); ++level) {
        const auto r = static_cast<std::size_t>(spec.level_resolution(level));
        l.noise.emplace_back(r * r, 0.0);
    }
    return l;
}

void DetailLatent::validate(const GeneratorSpec& spec) const
{
    if (static_cast<int>(z.size()) != spec.latentDim) {
        throw Error("latent code has " + std::to_string(z.size()) + " entries, expected " + std::to_string(spec.latentDim));
    }
    if (static_cast<int>(noise.size()) != spec.levels()) {
        throw Error("latent has " + std::to_string(noise.size()) + " noise maps, expected " + std::to_string(spec.levels()));
    }
    for (int level = 0; level < spec.levels(); ++level) {
        const auto r = static_cast<std::size_t>(spec.level_resolution(level));
        if (noise[static_cast<std::size_t>(level)].size() != r * r) {
            throw Error("noise map " + std::to_string(level) + " does not match its level resolution " + std::to_string(r));
        }
    }
    for (double v : flatten()) {
        if (!std::isfinite(v)) {
            throw NumericError("latent contains non-finite values");
        }
    }
}

std::size_t DetailLatent::size() const
{
    std::size_t n = z.size();
    for (const auto& p : noise) {
        n += p.size();
    }
    return n;
}

std::vector<double> DetailLatent::flatten() const
{
    std::vector<double> out(z);
    for (const auto& p : noise) {
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

void DetailLatent::assign(std::span<const double> flat)
{
    if (flat.size() != size()) {
        throw Error("flat latent size mismatch");
    }
    std::size_t k = 0;
    for (double& v : z) {
        v = flat[k++];
    }
    for (auto& p : noise) {
        for (double& v : p) {
            v = flat[k++];
        }
    }
}

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(std::move(spec))
{
    spec_.validate();
    const int levels = spec_.levels();
    const auto& ch = spec_.channelsPerLevel;
    const int b = spec_.baseResolution;

    for (int d = 0; d < spec_.mappingDepth; ++d) {
        mapping_.push_back(Dense::declare(params_, "mapping." + std::to_string(d), spec_.latentDim, spec_.latentDim, kReluGain));
    }
    encoder_.resize(static_cast<std::size_t>(levels));
    for (int l = levels - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        const std::string name = "encoder." + std::to_string(l);
        if (l == levels - 1) {
            encoder_[ul] = Conv2d::declare(params_, name, spec_.inChannels, ch[ul], 3, 1, kReluGain);
        } else {
            encoder_[ul] = Conv2d::declare(params_, name, ch[ul + 1], ch[ul], 3, 2, kReluGain);
        }
    }
    constant_ = params_.add("synthesis.constant", {ch[0], b, b});
    for (int l = 0; l < levels; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        const std::string name = "synthesis." + std::to_string(l);
        const int in = l == 0 ? ch[0] : ch[ul - 1];
        conv_.push_back(Conv2d::declare(params_, name + ".conv", in, ch[ul], 3, 1, kReluGain));
        style_.push_back(Dense::declare(params_, name + ".style", spec_.latentDim, 2 * ch[ul], kStyleGain));
        noiseStrength_.push_back(params_.add(name + ".noise_strength", {ch.back()}));
    }
    toOutput_ = Conv2d::declare(params_, "synthesis.to_output", ch.back(), spec_.outChannels, 1, 1);

    Rng rng(seed, 0x6e6e);
    for (const auto& m : mapping_) {
        m.init(params_, rng);
    }
    for (int l = levels - 1; l >= 0; --l) {
        encoder_[static_cast<std::size_t>(l)].init(params_, rng);
    }
    for (double& v : params_.values(constant_)) {
        v = rng.normal();
    }
    for (int l = 0; l < levels; ++l) {
        conv_[static_cast<std::size_t>(l)].init(params_, rng);
        style_[static_cast<std::size_t>(l)].init(params_, rng);
    }
    toOutput_.init(params_, rng, true);
}

void Generator::check_cond(const geometry::UVMap& cond) const
{
    if (cond.channels != spec_.inChannels) {
        throw Error("conditional input has " + std::to_string(cond.channels) + " channels, expected " +
                    std::to_string(spec_.inChannels));
    }
    if (cond.width != spec_.outputResolution || cond.height != spec_.outputResolution) {
        throw Error("conditional input is " + std::to_string(cond.width) + "x" + std::to_string(cond.height) +
                    ", generator resolution is " + std::to_string(spec_.outputResolution));
    }
    if (cond.mask.size() != cond.texel_count() || cond.data.size() != cond.texel_count() * static_cast<std::size_t>(cond.channels)) {
        throw Error("conditional input buffers are inconsistent");
    }
}

std::vector<double> Generator::mapping(std::span<const double> z) const
{
    if (static_cast<int>(z.size()) != spec_.latentDim) {
        throw Error("latent code has " + std::to_string(z.size()) + " entries, expected " + std::to_string(spec_.latentDim));
    }
    std::vector<double> h = pixel_norm(z);
    for (const auto& m : mapping_) {
        h = m.forward(params_, h);
        leaky_relu_inplace(h);
    }
    return h;
}

std::vector<Tensor> Generator::encode(const geometry::UVMap& cond) const
{
    check_cond(cond);
    const int levels = spec_.levels();
    std::vector<Tensor> feats(static_cast<std::size_t>(levels));
    Tensor x = tensor_from_uv(cond, 0, spec_.inChannels, spec_.inputShift, spec_.inputScale);
    for (int l = levels - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        Tensor e = encoder_[ul].forward(params_, l == levels - 1 ? x : feats[ul + 1]);
        leaky_relu_inplace(e.data);
        feats[ul] = std::move(e);
    }
    return feats;
}

geometry::UVMap Generator::forward(const geometry::UVMap& cond, const DetailLatent& latent, Trace* trace) const
{
    latent.validate(spec_);
    std::vector<double> h = pixel_norm(latent.z);
    if (trace) {
        trace->z = latent.z;
        trace->mappingIn.clear();
        trace->mappingPre.clear();
        trace->fromW = false;
    }
    for (const auto& m : mapping_) {
        if (trace) {
            trace->mappingIn.push_back(h);
        }
        h = m.forward(params_, h);
        if (trace) {
            trace->mappingPre.push_back(h);
        }
        leaky_relu_inplace(h);
    }
    return synthesize(cond, std::move(h), latent.noise, trace);
}

geometry::UVMap Generator::forward_w(const geometry::UVMap& cond, std::span<const double> w,
                                     const std::vector<std::vector<double>>& noise, Trace* trace) const
{
    if (static_cast<int>(w.size()) != spec_.latentDim) {
        throw Error("style vector size mismatch");
    }
    DetailLatent probe = DetailLatent::zeros(spec_);
    probe.noise = noise;
    probe.validate(spec_);
    if (trace) {
        trace->fromW = true;
        trace->z.clear();
        trace->mappingIn.clear();
        trace->mappingPre.clear();
    }
    return synthesize(cond, {w.begin(), w.end()}, noise, trace);
}

geometry::UVMap Generator::synthesize(const geometry::UVMap& cond, std::vector<double> w,
                                      const std::vector<std::vector<double>>& noise, Trace* trace) const
{
    check_cond(cond);
    const int levels = spec_.levels();
    const auto& ch = spec_.channelsPerLevel;
    Tensor x0 = tensor_from_uv(cond, 0, spec_.inChannels, spec_.inputShift, spec_.inputScale);

    std::vector<Tensor> feats(static_cast<std::size_t>(levels));
    std::vector<Tensor> encPre(static_cast<std::size_t>(levels));
    for (int l = levels - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        encPre[ul] = encoder_[ul].forward(params_, l == levels - 1 ? x0 : feats[ul + 1]);
        feats[ul] = encPre[ul];
        leaky_relu_inplace(feats[ul].data);
    }

    if (trace) {
        trace->cond = x0;
        trace->w = w;
        trace->encoderPre = encPre;
        trace->features = feats;
        trace->styles.clear();
        trace->noise.clear();
        trace->convIn.clear();
        trace->convOut.clear();
        trace->preActivation.clear();
        trace->mask = cond.mask;
    }

    Tensor x;
    for (int l = 0; l < levels; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        Tensor in;
        if (l == 0) {
            const auto c = params_.values(constant_);
            in = Tensor::zeros(ch[0], spec_.baseResolution, spec_.baseResolution);
            std::copy(c.begin(), c.end(), in.data.begin());
        } else {
            in = upsample2x(x);
        }
        Tensor c = conv_[ul].forward(params_, in);
        const auto styles = style_[ul].forward(params_, w);
        Tensor m = style_modulate(c, styles);
        if (trace) {
            trace->convIn.push_back(std::move(in));
            trace->convOut.push_back(std::move(c));
            trace->styles.push_back(styles);
            trace->preActivation.push_back(m);
        }
        leaky_relu_inplace(m.data);
        m += feats[ul];
        x = std::move(m);
    }
    // Noise of every level enters the last features, which reach the output
    // through a per-texel linear map.
    const int res = spec_.outputResolution;
    for (int l = 0; l < levels; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        auto lifted = lift_noise(noise[ul], spec_.noise_upsample(l), cond.mask, res);
        const auto strength = params_.values(noiseStrength_[ul]);
        for (int c = 0; c < x.channels; ++c) {
            double* row = x.data.data() + static_cast<std::size_t>(c) * x.plane();
            const double s = strength[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < x.plane(); ++i) {
                row[i] += s * lifted[i];
            }
        }
        if (trace) {
            trace->noise.push_back(std::move(lifted));
        }
    }
    const Tensor o = toOutput_.forward(params_, x);
    if (trace) {
        trace->finalIn = std::move(x);
    }

    geometry::UVMap out = cond.slice(0, spec_.outChannels);
    const auto oc = static_cast<std::size_t>(spec_.outChannels);
    for (std::size_t p = 0; p < out.texel_count(); ++p) {
        if (!out.mask[p]) {
            continue;
        }
        for (std::size_t c = 0; c < oc; ++c) {
            out.data[p * oc + c] += spec_.outputScale[c] * o.data[c * o.plane() + p];
        }
    }
    out.apply_mask();
    return out;
}

Generator::Gradients Generator::make_gradients(bool withParams) const
{
    Gradients g;
    if (withParams) {
        g.params.assign(params_.size(), 0.0);
    }
    g.z.assign(static_cast<std::size_t>(spec_.latentDim), 0.0);
    g.w.assign(static_cast<std::size_t>(spec_.latentDim), 0.0);
    for (int l = 0; l < spec_.levels(); ++l) {
        const auto r = static_cast<std::size_t>(spec_.level_resolution(l));
        g.noise.emplace_back(r * r, 0.0);
    }
    return g;
}

void Generator::backward(const Trace& trace, const geometry::UVMap& gradOutput, Gradients& grads) const
{
    const int levels = spec_.levels();
    const bool withParams = !grads.params.empty();
    std::vector<double> scratch;
    if (!withParams) {
        scratch.assign(params_.size(), 0.0);
    }
    std::span<double> pg = withParams ? std::span<double>(grads.params) : std::span<double>(scratch);
    if (grads.noise.size() != static_cast<std::size_t>(levels) || grads.w.size() != static_cast<std::size_t>(spec_.latentDim)) {
        throw Error("gradient buffers were not created by make_gradients");
    }

    const int res = spec_.outputResolution;
    const auto oc = static_cast<std::size_t>(spec_.outChannels);
    Tensor dOut = Tensor::zeros(spec_.outChannels, res, res);
    for (std::size_t p = 0; p < dOut.plane(); ++p) {
        if (!trace.mask[p]) {
            continue;
        }
        for (std::size_t c = 0; c < oc; ++c) {
            dOut.data[c * dOut.plane() + p] = spec_.outputScale[c] * gradOutput.data[p * oc + c];
        }
    }
    Tensor dx = toOutput_.backward(params_, trace.finalIn, dOut, pg);
    for (int l = 0; l < levels; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        const auto& lifted = trace.noise[ul];
        const auto strength = params_.values(noiseStrength_[ul]);
        auto gs = grad_slice(pg, params_, noiseStrength_[ul]);
        std::vector<double> dLifted(dx.plane(), 0.0);
        for (int c = 0; c < dx.channels; ++c) {
            const double* row = dx.data.data() + static_cast<std::size_t>(c) * dx.plane();
            const double s = strength[static_cast<std::size_t>(c)];
            double ds = 0.0;
            for (std::size_t i = 0; i < dx.plane(); ++i) {
                ds += row[i] * lifted[i];
                dLifted[i] += s * row[i];
            }
            gs[static_cast<std::size_t>(c)] += ds;
        }
        const auto dn = lower_noise(std::move(dLifted), spec_.noise_upsample(l), trace.mask, res);
        for (std::size_t i = 0; i < dn.size(); ++i) {
            grads.noise[ul][i] += dn[i];
        }
    }

    std::vector<double> dw(static_cast<std::size_t>(spec_.latentDim), 0.0);
    std::vector<Tensor> dFeat(static_cast<std::size_t>(levels));
    for (int l = levels - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        dFeat[ul] = dx;
        Tensor dm = std::move(dx);
        leaky_relu_backward(trace.preActivation[ul].data, dm.data);
        std::vector<double> dStyles(trace.styles[ul].size());
        const Tensor dc = style_modulate_backward(trace.convOut[ul], trace.styles[ul], dm, dStyles);
        const auto dwl = style_[ul].backward(params_, trace.w, dStyles, pg);
        for (std::size_t i = 0; i < dw.size(); ++i) {
            dw[i] += dwl[i];
        }
        Tensor din = conv_[ul].backward(params_, trace.convIn[ul], dc, pg);
        if (l > 0) {
            dx = upsample2x_backward(din);
        } else {
            auto gc = grad_slice(pg, params_, constant_);
            for (std::size_t i = 0; i < gc.size(); ++i) {
                gc[i] += din.data[i];
            }
        }
    }

    if (withParams) {
        for (int l = 0; l < levels; ++l) {
            const auto ul = static_cast<std::size_t>(l);
            Tensor de = dFeat[ul];
            leaky_relu_backward(trace.encoderPre[ul].data, de.data);
            const bool top = l == levels - 1;
            Tensor dIn = encoder_[ul].backward(params_, top ? trace.cond : trace.features[ul + 1], de, pg, !top);
            if (!top) {
                dFeat[ul + 1] += dIn;
            }
        }
    }

    for (std::size_t i = 0; i < dw.size(); ++i) {
        grads.w[i] += dw[i];
    }
    if (trace.fromW) {
        return;
    }
    std::vector<double> dh = dw;
    for (int d = spec_.mappingDepth - 1; d >= 0; --d) {
        const auto ud = static_cast<std::size_t>(d);
        leaky_relu_backward(trace.mappingPre[ud], dh);
        dh = mapping_[ud].backward(params_, trace.mappingIn[ud], dh, pg);
    }
    const auto dz = pixel_norm_backward(trace.z, dh);
    for (std::size_t i = 0; i < dz.size(); ++i) {
        grads.z[i] += dz[i];
    }
}

const char* to_string(DiscriminatorKind kind)
{
    switch (kind) {
    case DiscriminatorKind::Detail:
        return "detail";
    case DiscriminatorKind::NormalDetail:
        return "normal_detail";
    case DiscriminatorKind::Expression:
        return "exp";
    case DiscriminatorKind::NormalExpression:
        return "normal_exp";
    }
    return "unknown";
}

int discriminator_channels(DiscriminatorKind kind)
{
    switch (kind) {
    case DiscriminatorKind::Detail:
        return 12;
    case DiscriminatorKind::NormalDetail:
        return 3;
    case DiscriminatorKind::Expression:
        return 9;
    case DiscriminatorKind::NormalExpression:
        return 6;
    }
    return 0;
}

std::string discriminator_layout(DiscriminatorKind kind)
{
    switch (kind) {
    case DiscriminatorKind::Detail:
        return "12 channels: condition S_base(3) T_base(3) + output S_detail(3) T_detail(3)";
    case DiscriminatorKind::NormalDetail:
        return "3 channels: normal map of S_detail";
    case DiscriminatorKind::Expression:
        return "9 channels: condition S_detail+E_base(3) E_base(3) + output S_refine(3)";
    case DiscriminatorKind::NormalExpression:
        return "6 channels: normal map of S_refine(3) + E_base(3)";
    }
    return "";
}

Discriminator::Discriminator(DiscriminatorKind kind, const GeneratorSpec& spec, std::uint64_t seed)
    : kind_(kind), resolution_(spec.outputResolution)
{
    spec.validate();
    const int levels = spec.levels();
    const auto& ch = spec.channelsPerLevel;
    convs_.push_back(Conv2d::declare(params_, "from_input", discriminator_channels(kind), ch.back(), 3, 1, kReluGain));
    for (int l = levels - 1; l >= 1; --l) {
        const auto ul = static_cast<std::size_t>(l);
        convs_.push_back(Conv2d::declare(params_, "down." + std::to_string(l), ch[ul], ch[ul - 1], 3, 2, kReluGain));
    }
    const int b = spec.baseResolution;
    logit_ = Dense::declare(params_, "logit", ch[0] * b * b, 1);
    Rng rng(seed, 0xd15c);
    for (const auto& c : convs_) {
        c.init(params_, rng);
    }
    logit_.init(params_, rng);
}

double Discriminator::forward(const Tensor& input, Trace* trace) const
{
    if (input.channels != discriminator_channels(kind_)) {
        throw Error(std::string(to_string(kind_)) + " discriminator got " + std::to_string(input.channels) +
                    " channels; expected " + discriminator_layout(kind_));
    }
    if (input.width != resolution_ || input.height != resolution_) {
        throw Error("discriminator input resolution mismatch");
    }
    if (trace) {
        trace->inputs.clear();
        trace->pre.clear();
    }
    Tensor x = input;
    for (const auto& c : convs_) {
        Tensor y = c.forward(params_, x);
        if (trace) {
            trace->inputs.push_back(std::move(x));
            trace->pre.push_back(y);
        }
        leaky_relu_inplace(y.data);
        x = std::move(y);
    }
    if (trace) {
        trace->flat = x.data;
    }
    return logit_.forward(params_, x.data)[0];
}

Tensor Discriminator::backward(const Trace& trace, double dLogit, std::span<double> paramGrads) const
{
    std::vector<double> scratch;
    if (paramGrads.empty()) {
        scratch.assign(params_.size(), 0.0);
        paramGrads = scratch;
    }
    const double g[1] = {dLogit};
    const auto dflat = logit_.backward(params_, trace.flat, g, paramGrads);
    const Tensor& last = trace.pre.back();
    Tensor dx = Tensor::zeros(last.channels, last.height, last.width);
    dx.data = dflat;
    for (std::size_t k = convs_.size(); k-- > 0;) {
        leaky_relu_backward(trace.pre[k].data, dx.data);
        dx = convs_[k].backward(params_, trace.inputs[k], dx, paramGrads);
    }
    return dx;
}

} // namespace facekit::neuralgen
