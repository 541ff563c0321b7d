#include "unicalli/evaluate.hpp"

#include "unicalli/codec.hpp"
#include "unicalli/sampler.hpp"

namespace unicalli {

EvalReport evaluate(const DuplexDiT<float>& model, const Alphabet& alphabet, const std::vector<Sample>& samples,
                    const EvalOptions& options) {
    const Codec codec;
    const StripGeometry geometry;
    const auto atlas = alphabet.atlas(geometry.slot);
    EvalReport report;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const Sample& s = samples[k];
        SampleEval ev;
        ev.name = "sample" + std::to_string(k);
        SampleRequest req;
        req.steps = options.steps;
        req.seed = hash_words({options.seed, k});
        req.cond = s.cond;
        if (options.generation && s.labeled) {
            req.mode = Mode::generation;
            GeneratedStrip g = generate(model, codec.encode(s.content), req);
            GrayImage strip = codec.decode(g.strip);
            ev.l1 = l1(strip, s.strip);
            ev.ssim = ssim(strip, s.strip);
            ev.box_iou = mean_box_iou(extract_boxes(codec.decode(g.box_map)), s.boxes);
        }
        if (options.recognition && s.labeled) {
            req.mode = Mode::recognition;
            Latent box = codec.encode(s.box_map);
            Latent content = recognize(model, codec.encode(s.strip), options.box_free ? nullptr : &box, req);
            auto ids = decode_glyphs(codec.decode(content), atlas, geometry);
            ev.accuracy = char_accuracy(ids, *s.labels);
        }
        report.samples.push_back(std::move(ev));
    }
    return report;
}

} // namespace unicalli
