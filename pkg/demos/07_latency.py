"""Measuring single-image inference latency.

The benchmark forwards one RGB frame repeatedly under a fixed thread
count and reports the median, which is robust against the occasional
scheduler hiccup.  Reduced-width models keep this demo quick; the
numbers to quote for the real architectures come from the selftest's
latency suite, which runs both full-width depths at 256x256.
"""

from mxrunet.metrics import benchmark_latency
from mxrunet.model import ModelConfig, build_unet

# warmup iterations are discarded: the first passes pay for allocator
# growth and cache warming and would skew the tail.
for depth in (18, 50):
    model = build_unet(ModelConfig(encoder_depth=depth,
                                   width_multiplier=0.25), seed=0)
    report = benchmark_latency(model, input_size=96, warmup=3, runs=10,
                               threads=1, model_id=f"depth-{depth} quarter-width")
    for line in report.lines():
        print(line)
    print()

# Expect the deeper encoder to cost several times more per frame; at
# full width and 256x256 the measured gap is above 7x on one core.
