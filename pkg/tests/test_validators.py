"""参数验证器的单元测试

测试所有验证器函数的正确性和边界情况。
"""

import pytest

from gemcap.validators import (
    validate_choice,
    validate_fractions,
    validate_image_size,
    validate_paper_axis,
    validate_positive_int,
)


class TestValidatePositiveInt:
    """测试正整数验证"""

    def test_valid(self):
        """测试有效值"""
        assert validate_positive_int(5, "n") == 5

    def test_min_val(self):
        """测试自定义下限（边界值）"""
        assert validate_positive_int(0, "multiplier", min_val=0) == 0
        with pytest.raises(ValueError, match="必须 >= 4"):
            validate_positive_int(3, "n_base", min_val=4)

    def test_zero_rejected_by_default(self):
        """测试默认下限为 1"""
        with pytest.raises(ValueError, match="必须 >= 1"):
            validate_positive_int(0, "batch")

    def test_float_rejected(self):
        """测试浮点数（应被拒绝）"""
        with pytest.raises(ValueError, match="必须是整数类型"):
            validate_positive_int(2.0, "batch")

    def test_bool_rejected(self):
        """测试 bool（虽然是 int 子类，也应被拒绝）"""
        with pytest.raises(ValueError, match="必须是整数类型"):
            validate_positive_int(True, "batch")


class TestValidateChoice:
    """测试枚举参数验证"""

    def test_normalizes_case(self):
        """测试大小写和空白归一化"""
        assert validate_choice(" LSTM ", "cell", ("gru", "lstm")) == "lstm"

    def test_unknown(self):
        """测试未知取值"""
        with pytest.raises(ValueError, match="之一"):
            validate_choice("rnn", "cell", ("gru", "lstm"))

    def test_non_string(self):
        """测试非字符串输入"""
        with pytest.raises(ValueError, match="必须是字符串"):
            validate_choice(1, "cell", ("gru", "lstm"))


class TestValidateFractions:
    """测试划分比例验证"""

    def test_valid(self):
        """测试有效比例"""
        assert validate_fractions([0.75, 0.15, 0.10]) == (0.75, 0.15, 0.10)

    def test_wrong_length(self):
        """测试长度不是 3"""
        with pytest.raises(ValueError, match="3 个值"):
            validate_fractions([0.5, 0.5])

    def test_bad_sum(self):
        """测试和不为 1"""
        with pytest.raises(ValueError, match="之和必须为 1"):
            validate_fractions([0.5, 0.5, 0.5])

    def test_negative(self):
        """测试负比例"""
        with pytest.raises(ValueError, match=">= 0.0"):
            validate_fractions([0.6, -0.1, 0.5])

    def test_non_numeric(self):
        """测试非数字"""
        with pytest.raises(ValueError, match="必须是数字类型"):
            validate_fractions(["0.8", 0.1, 0.1])


class TestValidatePaperAxis:
    """测试实验网格轴验证"""

    @pytest.mark.parametrize(
        "axis,value",
        [
            ("hidden", 512),
            ("batch", 512),
            ("lr", 0.0001),
            ("optimizer", "RMSprop"),
            ("cell", "gru"),
        ],
    )
    def test_valid(self, axis, value):
        """测试允许的取值"""
        assert validate_paper_axis(axis, value)

    def test_off_axis(self):
        """测试不在轴上的取值"""
        with pytest.raises(ValueError, match="hidden"):
            validate_paper_axis("hidden", 100)
        with pytest.raises(ValueError):
            validate_paper_axis("optimizer", "sgd")

    def test_unknown_axis(self):
        """测试未知轴"""
        with pytest.raises(ValueError, match="未知的网格轴"):
            validate_paper_axis("dropout", 0.5)


class TestValidateImageSize:
    """测试图像尺寸验证"""

    def test_valid(self):
        """测试有效尺寸"""
        assert validate_image_size(64, blocks=3) == 64

    def test_too_small(self):
        """测试小于 32"""
        with pytest.raises(ValueError, match="必须 >= 32"):
            validate_image_size(16)

    def test_not_divisible(self):
        """测试不能被池化倍数整除"""
        with pytest.raises(ValueError, match="整除"):
            validate_image_size(40, blocks=4)
