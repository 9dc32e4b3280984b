from setuptools import setup

setup(
    name="gemcap",
    version="0.1.0",
    description="珠宝图像分类与分级描述生成（CNN 编码器 + GRU/LSTM 解码器）及 MCP 服务器",
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.24.0",
        "Pillow>=10.0.0",
        "fastmcp>=2.0.0",
        "python-dotenv>=1.0.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
            "pytest-asyncio>=0.21.0",
            "black>=23.12.0",
            "isort>=5.13.0",
        ],
    },
    package_dir={"gemcap": "src/gemcap", "server": "server"},
    packages=["gemcap", "server"],
    entry_points={
        "console_scripts": [
            "gemcap=gemcap.cli:main",
            "gemcap-mcp=server.mcp_server:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
