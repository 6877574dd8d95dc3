"""Mandarin toneme inventory: pinyin splitting, label sets and frame rasterisation."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FRAME_RATE, FramingError, expected_frames

SILENCE = "sil"
VOWELS = set("aeiouüê")
ONSETS = ("zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h",
          "j", "q", "x", "r", "z", "c", "s", "y", "w")
CODAS = ("", "n", "ng", "r")
TONES = "12345"

# Standard pinyin syllable table (toneless, ü written as "ü").
_TABLE = """
a ai an ang ao o ou e ê ei en eng er
ba bai ban bang bao bei ben beng bi bian biao bie bin bing bo bu
pa pai pan pang pao pei pen peng pi pian piao pie pin ping po pou pu
ma mai man mang mao me mei men meng mi mian miao mie min ming miu mo mou mu
fa fan fang fei fen feng fo fou fu
da dai dan dang dao de dei den deng di dia dian diao die ding diu dong dou du duan dui dun duo
ta tai tan tang tao te teng ti tian tiao tie ting tong tou tu tuan tui tun tuo
na nai nan nang nao ne nei nen neng ni nian niang niao nie nin ning niu nong nou nu nuan nuo nü nüe
la lai lan lang lao le lei leng li lia lian liang liao lie lin ling liu lo long lou lu luan lun luo lü lüe
ga gai gan gang gao ge gei gen geng gong gou gu gua guai guan guang gui gun guo
ka kai kan kang kao ke kei ken keng kong kou ku kua kuai kuan kuang kui kun kuo
ha hai han hang hao he hei hen heng hong hou hu hua huai huan huang hui hun huo
ji jia jian jiang jiao jie jin jing jiong jiu ju juan jue jun
qi qia qian qiang qiao qie qin qing qiong qiu qu quan que qun
xi xia xian xiang xiao xie xin xing xiong xiu xu xuan xue xun
zha zhai zhan zhang zhao zhe zhei zhen zheng zhi zhong zhou zhu zhua zhuai zhuan zhuang zhui zhun zhuo
cha chai chan chang chao che chen cheng chi chong chou chu chua chuai chuan chuang chui chun chuo
sha shai shan shang shao she shei shen sheng shi shou shu shua shuai shuan shuang shui shun shuo
ran rang rao re ren reng ri rong rou ru rua ruan rui run ruo
za zai zan zang zao ze zei zen zeng zi zong zou zu zuan zui zun zuo
ca cai can cang cao ce cen ceng ci cong cou cu cuan cui cun cuo
sa sai san sang sao se sen seng si song sou su suan sui sun suo
ya yan yang yao ye yi yin ying yo yong you yu yuan yue yun
wa wai wan wang wei wen weng wo wu
"""
PINYIN_TABLE = tuple(_TABLE.split())


class PinyinError(ValueError):
    pass


def normalize_pinyin(s):
    return s.strip().lower().replace("v", "ü").replace("u:", "ü")


def split_syllable(syllable, tones=True):
    """Split a toned pinyin syllable into [onset], nucleus+tone, [coda].

    >>> split_syllable("teng2")
    ['t', 'e2', 'ng']
    """
    s = normalize_pinyin(syllable)
    if len(s) < 2 or s[-1] not in TONES:
        raise PinyinError(f"{syllable!r}: expected a trailing tone digit 1-5")
    tone, body = s[-1], s[:-1]
    if body == "er":
        return ["er" + tone if tones else "er"]
    onset = ""
    for cand in ONSETS:
        if body.startswith(cand) and len(body) > len(cand) and body[len(cand)] in VOWELS:
            onset = cand
            break
    k = len(onset)
    end = k
    while end < len(body) and body[end] in VOWELS:
        end += 1
    nucleus, coda = body[k:end], body[end:]
    if not nucleus:
        raise PinyinError(f"{syllable!r}: no vowel found")
    if coda not in CODAS:
        raise PinyinError(f"{syllable!r}: invalid coda {coda!r}")
    parts = [onset] if onset else []
    parts.append(nucleus + tone if tones else nucleus)
    if coda:
        parts.append(coda)
    return parts


def strip_tone(label):
    return label.rstrip(TONES) if label != SILENCE else label


def tone_of(label):
    """Tone digit of a toned nucleus label, or None for consonants/silence."""
    return int(label[-1]) if label and label[-1] in TONES else None


@dataclass
class TonemeSet:
    labels: list
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not self.labels or self.labels[0] != SILENCE:
            raise ValueError("index 0 must be the silence label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in toneme set")
        self.index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def size(self):
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.index

    def id(self, label):
        if not label:
            return 0
        try:
            return self.index[label]
        except KeyError:
            raise KeyError(f"unknown toneme {label!r}") from None

    def save(self, path):
        Path(path).write_text("\n".join(self.labels) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls([ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln])


def build_inventory(lexicon, tones=True) -> TonemeSet:
    lexicon = list(lexicon)
    if not lexicon:
        raise ValueError("empty lexicon")
    units = set()
    for syl in lexicon:
        units.update(split_syllable(syl, tones))
    return TonemeSet([SILENCE] + sorted(units))


def full_lexicon():
    return [syl + t for syl in PINYIN_TABLE for t in TONES]


def full_inventory(tones=True) -> TonemeSet:
    return build_inventory(full_lexicon(), tones)


def rasterize(intervals, M, toneme_set: TonemeSet, frame_rate=FRAME_RATE, tones=True):
    """Frame labels for M frames; frame j (1-based) is sampled at (j - 0.5)/frame_rate.

    Intervals are half-open [start, end) except that the last one also
    covers its end point. Uncovered frames and empty labels map to silence.
    """
    total = getattr(intervals, "total_duration", None)
    if total:
        # unpadded framing loses up to win/hop - 1 frames against duration * rate
        try:
            lo = min(expected_frames(total)) - 2
        except FramingError:
            lo = 0
        hi = int(np.ceil(total * frame_rate)) + 2
        if not lo <= M <= hi:
            raise ValueError(f"M={M} frames inconsistent with {total:.3f} s of alignment ({lo}..{hi})")
    ids = np.zeros(M, dtype=np.int64)
    centres = (np.arange(M) + 0.5) / frame_rate
    ivs = list(intervals)
    for k, (start, end, label) in enumerate(ivs):
        label = label.strip()
        if label in ("", SILENCE, "sp", "sil", "<eps>"):
            continue
        if not tones:
            label = strip_tone(label)
        idx = toneme_set.id(label)
        if k == len(ivs) - 1:
            hit = (centres >= start) & (centres <= end)
        else:
            hit = (centres >= start) & (centres < end)
        ids[hit] = idx
    return ids


def syllable_intervals_to_tonemes(syllables, tones=True):
    """Flatten a list of syllables to their toneme label sequence."""
    out = []
    for syl in syllables:
        out.extend(split_syllable(syl, tones))
    return out
