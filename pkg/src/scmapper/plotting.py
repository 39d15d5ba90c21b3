"""Companion gnuplot scripts for the CSV artifacts (nothing is plotted here)."""
from __future__ import annotations

import os
from pathlib import Path

_TEMPLATES = {
    "channel-table": """set datafile separator ','
set key autotitle columnhead top left
set xlabel 'average erasure probability'
set ylabel 'bit-channel erasure probability'
set grid
plot {series}
""",
    "threshold": """set datafile separator ','
set key autotitle columnhead
set xlabel 'L'
set grid
set multiplot layout 2,1
set ylabel 'threshold / rate'
plot '{data}' using 1:($2==2?$3:NaN) with linespoints title 'threshold w=2', \\
     '{data}' using 1:($2==4?$3:NaN) with linespoints title 'threshold w=4', \\
     '{data}' using 1:($2==2?$4:NaN) with lines dt 2 title 'R w=2', \\
     '{data}' using 1:($2==4?$4:NaN) with lines dt 2 title 'R w=4'
set ylabel 'gap to capacity'
plot '{data}' using 1:($2==2?$5:NaN) with linespoints title 'w=2', \\
     '{data}' using 1:($2==4?$5:NaN) with linespoints title 'w=4'
unset multiplot
""",
    "wave": """set datafile separator ','
set xlabel 'iteration'
set ylabel 'position index'
set cblabel 'erasure probability'
set view map
# skip the header row and the iteration column
plot '{data}' matrix every ::1:1 using 2:1:3 with image notitle
""",
    "mapper": """set datafile separator ','
set xlabel 'spatial position'
set ylabel 'fraction on channel 1'
set yrange [0:1]
set grid
plot '{data}' matrix every :::0::0 using ($1+1):3 with linespoints notitle
""",
}


def write_script(kind: str, data_path, **kw) -> Path:
    data = Path(data_path)
    if kind == "channel-table":
        m = kw.get("m", 2)
        series = ", ".join(f"'{data.name}' using 1:{3 + i} with lines" for i in range(m))
        text = _TEMPLATES[kind].format(series=series)
    else:
        text = _TEMPLATES[kind].format(data=data.name)
    out = data.with_suffix(".gp")
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text(f"set terminal pngcairo size 800,600\nset output '{data.stem}.png'\n" + text)
    os.replace(tmp, out)
    return out
